"""Three-stage training: cot cold start, latent alignment, answer fine-tune.

Per-stage loss:

    stage 1: summed next-token cross-entropy over cot+answer positions
    stage 2: the stage-1 term restricted to answer positions, plus
             lambda * ||h_bot - v||^2 against the stored target vector
    stage 3: answer-only next-token cross-entropy

NTP is summed over supervised positions and averaged over the batch; the
alignment term is a squared L2 norm averaged over the batch. Training is
single-writer and fully seeded: fixed seeds and corpus order give
bit-identical checkpoints on one platform.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractViolation
from .latent import AssembledSequence, LatentConfig, assemble, fill_latents, read_alignment_state
from .model import MicroTransformer, with_extended_vocab
from .optim import AdamW
from .taskgen import Sample
from .tokenizer import LATENT_SPECIALS, Tokenizer

__all__ = [
    "StageConfig",
    "LossBreakdown",
    "init_special_tokens",
    "assemble_corpus",
    "stage_loss",
    "run_stage",
]


@dataclass(frozen=True)
class StageConfig:
    stage: int
    epochs: int = 15
    learning_rate: float = 3e-4  # desk-scale profile; the paper-scale value is 2e-5
    lambda_mse: float = 1.0
    batch_size: int = 8
    grad_accum: int = 1
    weight_decay: float = 0.01
    seed: int = 0
    n_latents: int = 1
    stop_gradient: bool = False
    layer_source: object = "final"
    eval_every_epoch: bool = True

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ContractViolation(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.epochs < 0 or self.batch_size < 1 or self.grad_accum < 1:
            raise ContractViolation("bad epochs/batch_size/grad_accum")


@dataclass
class LossBreakdown:
    ntp: float
    total: float
    mse: Optional[float] = None
    loss: Optional[Tensor] = None  # graph node backing `total`

    def __post_init__(self):
        if self.mse is None and self.total != self.ntp:
            raise ContractViolation("without an mse term, total must equal ntp")


def init_special_tokens(
    model: MicroTransformer, tokenizer: Tokenizer
) -> Tuple[MicroTransformer, Tokenizer]:
    """Append the three latent tokens, mean-initializing their embeddings."""
    new_tok = tokenizer.extend_with_latent_tokens()  # raises on double init
    new_model = with_extended_vocab(model, len(LATENT_SPECIALS))
    return new_model, new_tok


def assemble_corpus(
    samples: Sequence[Sample],
    tokenizer: Tokenizer,
    stage: int,
    latent_cfg: LatentConfig,
) -> List[Tuple[str, AssembledSequence]]:
    out = []
    for s in samples:
        q = tokenizer.encode(s.question)
        a = tokenizer.encode(s.answer)
        cot = tokenizer.encode(s.cot) if stage == 1 else None
        out.append((s.sample_id, assemble(q, cot, a, stage, latent_cfg)))
    return out


def stage_loss(
    batch: Sequence[Tuple[str, AssembledSequence]],
    model: MicroTransformer,
    cfg: StageConfig,
    targets: Optional[Dict[str, np.ndarray]] = None,
) -> LossBreakdown:
    """Batch loss per the stage's case; `targets` is required in stage 2."""
    if not batch:
        raise ContractViolation("empty batch")
    ntp_terms: List[Tensor] = []
    mse_terms: List[Tensor] = []
    for sample_id, seq in batch:
        if seq.stage != cfg.stage:
            raise ContractViolation(
                f"sequence {sample_id} assembled for stage {seq.stage}, not {cfg.stage}"
            )
        trace = fill_latents(seq, model, stop_gradient=cfg.stop_gradient,
                             layer_source=cfg.layer_source)
        rows = np.asarray([p - 1 for p in seq.supervised], dtype=np.int64)
        tgt = np.asarray([seq.token_ids[p] for p in seq.supervised], dtype=np.int64)
        ntp_terms.append(ag.cross_entropy(trace.logits, rows, tgt))
        if cfg.stage == 2:
            if targets is None or sample_id not in targets:
                raise ContractViolation(f"stage 2 requires a target vector for {sample_id}")
            v = ag.constant(targets[sample_id])
            diff = ag.sub(read_alignment_state(trace, seq), v)
            mse_terms.append(ag.sum_all(ag.mul(diff, diff)))

    n = len(batch)
    ntp = ntp_terms[0]
    for t in ntp_terms[1:]:
        ntp = ag.add(ntp, t)
    ntp = ag.scale(ntp, 1.0 / n)
    if cfg.stage == 2:
        mse = mse_terms[0]
        for t in mse_terms[1:]:
            mse = ag.add(mse, t)
        mse = ag.scale(mse, 1.0 / n)
        total = ag.add(ntp, ag.scale(mse, cfg.lambda_mse))
        return LossBreakdown(
            ntp=float(ntp.data), mse=float(mse.data), total=float(total.data), loss=total
        )
    return LossBreakdown(ntp=float(ntp.data), total=float(ntp.data), loss=ntp)


def run_stage(
    samples: Sequence[Sample],
    model: MicroTransformer,
    tokenizer: Tokenizer,
    cfg: StageConfig,
    targets: Optional[Dict[str, np.ndarray]] = None,
    checkpoint_dir: Optional[Path] = None,
    eval_hook: Optional[Callable[[MicroTransformer, int], Dict[str, float]]] = None,
    log_hook: Optional[Callable[[Dict], None]] = None,
) -> Tuple[MicroTransformer, List[Dict]]:
    """Seeded single-pass epochs with per-epoch checkpoints and metrics.

    `eval_hook(model, epoch)` may return validation metrics to merge into
    the epoch record; `log_hook` receives each record as it is produced.
    """
    from .checkpoint import save_checkpoint  # deferred: checkpoint imports model

    latent_cfg = LatentConfig.from_tokenizer(tokenizer, n_latents=cfg.n_latents)
    assembled = assemble_corpus(samples, tokenizer, cfg.stage, latent_cfg)
    max_len = max(len(seq) for _, seq in assembled) if assembled else 0
    if max_len > model.config.max_seq_len:
        raise ContractViolation(
            f"assembled length {max_len} exceeds max_seq_len {model.config.max_seq_len}"
        )
    if cfg.stage == 2 and targets is not None:
        missing = [sid for sid, _ in assembled if sid not in targets]
        if missing:
            raise ContractViolation(f"stage 2 missing targets for {missing[:3]} ...")

    model.set_trainable(True)
    opt = AdamW(
        model.parameters(), learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    metrics: List[Dict] = []
    n = len(assembled)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = np.random.Generator(np.random.PCG64(cfg.seed * 1009 + epoch)).permutation(n)
        epoch_ntp = 0.0
        epoch_mse = 0.0
        mse_batches = 0
        steps = 0
        micro = 0
        opt.zero_grad()
        for start in range(0, n, cfg.batch_size):
            batch = [assembled[i] for i in order[start : start + cfg.batch_size]]
            br = stage_loss(batch, model, cfg, targets)
            loss = br.loss if cfg.grad_accum == 1 else ag.scale(br.loss, 1.0 / cfg.grad_accum)
            ag.backward(loss)
            epoch_ntp += br.ntp
            if br.mse is not None:
                epoch_mse += br.mse
                mse_batches += 1
            micro += 1
            if micro % cfg.grad_accum == 0:
                opt.step()
                opt.zero_grad()
                steps += 1
        if micro % cfg.grad_accum != 0:
            opt.step()
            opt.zero_grad()
            steps += 1
        n_batches = max(1, -(-n // cfg.batch_size))
        record: Dict = {
            "stage": cfg.stage,
            "epoch": epoch,
            "ntp": epoch_ntp / n_batches,
            "mse": (epoch_mse / mse_batches) if mse_batches else None,
            "steps": steps,
            "wall_ms": int((time.perf_counter() - t0) * 1000),
        }
        if eval_hook is not None and cfg.eval_every_epoch:
            record.update(eval_hook(model, epoch))
        if checkpoint_dir is not None:
            checkpoint_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(
                model, tokenizer, f"stage{cfg.stage}",
                checkpoint_dir / f"stage{cfg.stage}_epoch{epoch}.olmc",
            )
        if log_hook is not None:
            log_hook(record)
        metrics.append(record)
    return model, metrics
