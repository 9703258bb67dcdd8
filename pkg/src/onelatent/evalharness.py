"""Inference evaluation: accuracy, output-token accounting, OTC, compression.

Output length counts generated tokens (EOS included) plus the latent slots
when the mode uses them; prompt tokens are never counted. OTC is accuracy
in percent divided by average output tokens. Both accounting switches are
visible in the report so the convention travels with the numbers.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, SequenceOverflow
from .latent import LatentConfig, assemble_prompt
from .model import MicroTransformer
from .taskgen import Sample
from .tokenizer import Tokenizer

__all__ = [
    "AnswerNormalizer",
    "extract_answer",
    "compute_otc",
    "SampleRecord",
    "EvalReport",
    "run_eval",
    "compression_report",
    "macro_average",
    "report_to_json",
    "report_from_json",
    "report_to_table",
    "records_to_csv",
]


@dataclass(frozen=True)
class AnswerNormalizer:
    family: str  # "hash-marker" | "final-sentence"
    marker: str = "####"

    def __post_init__(self):
        if self.family not in ("hash-marker", "final-sentence"):
            raise ContractViolation(f"unknown normalizer family: {self.family}")

    @classmethod
    def for_kind(cls, kind: str) -> "AnswerNormalizer":
        return cls(family="hash-marker" if kind == "arith" else "final-sentence")


def _canonical_number(s: str) -> str:
    s = s.replace(",", "").strip()
    try:
        val = float(s)
    except ValueError:
        return s.lower()
    if val == int(val):
        return str(int(val))
    return repr(val)


def extract_answer(text: str, normalizer: AnswerNormalizer) -> str:
    """Total function: ill-formed outputs map to a string (possibly empty)
    and simply score incorrect."""
    if normalizer.family == "hash-marker":
        if normalizer.marker not in text:
            return ""
        tail = text.rsplit(normalizer.marker, 1)[1]
        tail = tail.split("\n")[0].strip()
        return _canonical_number(tail)
    sentences = [s.strip() for s in text.replace("!", ".").replace("?", ".").split(".")]
    sentences = [s for s in sentences if s]
    if not sentences:
        return ""
    return " ".join(sentences[-1].lower().split())


def compute_otc(acc_percent: float, avg_out: float) -> float:
    """Accuracy (percent) per generated token, rounded to 0.01."""
    if acc_percent == 0.0:
        return 0.0
    if avg_out <= 0:
        raise ContractViolation("avg_out must be positive when accuracy is nonzero")
    return round(acc_percent / avg_out, 2)


@dataclass
class SampleRecord:
    sample_id: str
    prompt_len: int
    output_len: int
    extracted: str
    gold: str
    correct: bool
    overflow: bool = False


@dataclass
class EvalReport:
    benchmark: str
    mode: str
    accuracy: float  # percent
    avg_out: float
    avg_in: float
    n_latents: int
    otc: float
    count_latents: bool
    count_eos: bool
    records: List[SampleRecord] = field(default_factory=list)
    compression: Optional[Dict[str, float]] = None

    def validate(self) -> None:
        expected = compute_otc(self.accuracy, self.avg_out if self.avg_out else 1.0)
        if abs(expected - self.otc) > 0.005:
            raise ContractViolation(
                f"OTC identity violated: {self.otc} vs Acc/AvgOut={expected}"
            )
        if self.compression is not None:
            cr = round(self.compression["co"] / self.compression["no"], 1)
            if abs(cr - self.compression["cr"]) > 0.05:
                raise ContractViolation("compression ratio identity violated")


def run_eval(
    model: MicroTransformer,
    tokenizer: Tokenizer,
    samples: Sequence[Sample],
    latent_cfg: LatentConfig,
    mode: str,
    decode_budget: int,
    normalizer: Optional[AnswerNormalizer] = None,
    benchmark: str = "corpus",
    count_latents: bool = True,
    count_eos: bool = True,
) -> EvalReport:
    """Greedy decoding over a corpus; per-sample overflow counts incorrect."""
    if not samples:
        raise ContractViolation("empty evaluation corpus")
    if normalizer is None:
        normalizer = AnswerNormalizer.for_kind(samples[0].kind)
    was_trainable = not model.frozen
    model.set_trainable(False)
    banned = [latent_cfg.begin_latent_id, latent_cfg.latent_id, latent_cfg.end_latent_id]
    special = set(tokenizer.special_ids())
    records: List[SampleRecord] = []
    n_lat = latent_cfg.n_latents if mode == "onelatent" else 0
    for s in samples:
        q_ids = tokenizer.encode(s.question)
        prompt, plan = assemble_prompt(q_ids, mode, latent_cfg)
        gold = extract_answer(s.answer, normalizer)
        try:
            gen, _ = model.generate(
                prompt,
                max_new_tokens=decode_budget,
                latent_plan=plan,
                eos_id=latent_cfg.eos_id,
                banned_ids=banned,
            )
        except SequenceOverflow:
            records.append(
                SampleRecord(
                    sample_id=s.sample_id,
                    prompt_len=len(prompt),
                    output_len=0,
                    extracted="",
                    gold=gold,
                    correct=False,
                    overflow=True,
                )
            )
            continue
        counted = [t for t in gen if count_eos or t != latent_cfg.eos_id]
        out_len = len(counted) + (n_lat if count_latents else 0)
        text = tokenizer.decode([t for t in gen if t not in special])
        extracted = extract_answer(text, normalizer)
        records.append(
            SampleRecord(
                sample_id=s.sample_id,
                prompt_len=len(prompt),
                output_len=out_len,
                extracted=extracted,
                gold=gold,
                correct=bool(extracted) and extracted == gold,
            )
        )
    if was_trainable:
        model.set_trainable(True)
    acc = 100.0 * sum(r.correct for r in records) / len(records)
    avg_out = float(np.mean([r.output_len for r in records]))
    avg_in = float(np.mean([r.prompt_len for r in records]))
    report = EvalReport(
        benchmark=benchmark,
        mode=mode,
        accuracy=round(acc, 2),
        avg_out=round(avg_out, 2),
        avg_in=round(avg_in, 2),
        n_latents=n_lat,
        otc=compute_otc(round(acc, 2), round(avg_out, 2)) if avg_out > 0 else 0.0,
        count_latents=count_latents,
        count_eos=count_eos,
        records=records,
    )
    report.validate()
    return report


def compression_report(cot_report: EvalReport, latent_report: EvalReport) -> Dict[str, float]:
    """#CO/#NO/#CR block comparing explicit-cot and latent output lengths."""
    cot_ids = [r.sample_id for r in cot_report.records]
    lat_ids = [r.sample_id for r in latent_report.records]
    if cot_ids != lat_ids or cot_report.benchmark != latent_report.benchmark:
        raise ContractViolation("compression requires both reports over the same corpus")
    co = cot_report.avg_out
    no = latent_report.avg_out
    if no <= 0:
        raise ContractViolation("latent-mode average output must be positive")
    return {"co": co, "no": no, "cr": round(co / no, 1)}


def macro_average(reports: Sequence[EvalReport]) -> Dict[str, float]:
    """Unweighted means plus both AVG OTC conventions, labeled.

    `otc_ratio_of_means` divides macro accuracy by macro output length;
    `otc_mean_of_otcs` averages the per-benchmark OTC values.
    """
    if not reports:
        raise ContractViolation("macro_average requires at least one report")
    accs = [r.accuracy for r in reports]
    outs = [r.avg_out for r in reports]
    otcs = [r.otc for r in reports]
    macro_acc = round(float(np.mean(accs)), 2)
    macro_out = round(float(np.mean(outs)), 2)
    return {
        "accuracy": macro_acc,
        "avg_out": macro_out,
        "otc_ratio_of_means": compute_otc(macro_acc, macro_out) if macro_out else 0.0,
        "otc_mean_of_otcs": round(float(np.mean(otcs)), 2),
    }


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def report_to_json(report: EvalReport) -> str:
    payload = asdict(report)
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def report_from_json(text: str) -> EvalReport:
    payload = json.loads(text)
    payload["records"] = [SampleRecord(**r) for r in payload["records"]]
    report = EvalReport(**payload)
    report.validate()
    return report


def report_to_table(reports: Sequence[EvalReport], macro: Optional[Dict[str, float]] = None) -> str:
    header = f"{'benchmark':<18} {'mode':<10} {'Acc':>7} {'#O':>8} {'#L':>4} {'OTC':>7}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.benchmark:<18} {r.mode:<10} {r.accuracy:>7.2f} {r.avg_out:>8.2f} "
            f"{r.n_latents:>4d} {r.otc:>7.2f}"
        )
        if r.compression:
            c = r.compression
            lines.append(
                f"{'':<18} {'compress':<10} #CO={c['co']:.2f} #NO={c['no']:.2f} "
                f"#CR={c['cr']:.1f}x"
            )
    if macro is not None:
        lines.append(
            f"{'AVG':<18} {'':<10} {macro['accuracy']:>7.2f} {macro['avg_out']:>8.2f} "
            f"{'':>4} {macro['otc_ratio_of_means']:>7.2f}"
        )
        lines.append(
            f"{'':<18} {'':<10} AVG OTC conventions: ratio-of-means="
            f"{macro['otc_ratio_of_means']:.2f}, mean-of-OTCs={macro['otc_mean_of_otcs']:.2f}"
        )
    return "\n".join(lines) + "\n"


def records_to_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["sample_id", "prompt_len", "output_len", "extracted", "gold", "correct", "overflow"]
    )
    for r in report.records:
        writer.writerow(
            [r.sample_id, r.prompt_len, r.output_len, r.extracted, r.gold,
             int(r.correct), int(r.overflow)]
        )
    return buf.getvalue()
