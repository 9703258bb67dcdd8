"""Pipeline steps behind the CLI: generate, render, extract, train, eval, report.

Every step is idempotent given identical inputs: it stamps its outputs with
the resolved-config hash and its direct input hashes, and a re-run that
finds matching stamps reports a cache hit instead of recomputing. `report`
refuses to combine artifacts whose config hashes disagree.
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .checkpoint import checkpoint_hash, load_checkpoint, save_checkpoint
from .config import RunConfig, file_hash
from .curriculum import StageConfig, init_special_tokens, run_stage
from .errors import DependencyError, LineageError
from .evalharness import (
    AnswerNormalizer,
    compression_report,
    macro_average,
    records_to_csv,
    report_from_json,
    report_to_json,
    report_to_table,
    run_eval,
)
from .latent import LatentConfig
from .model import MicroTransformer, ModelConfig
from .render import RenderConfig, normalize_cot, render, write_pgm
from .targets import PatchStatsFrontEnd, TargetVector, extract_target, load_targets, store_targets
from .taskgen import (
    ExpansionConfig,
    Sample,
    expand_cot,
    expander_for,
    gen_corpus,
    judge_for,
    read_manifest,
    write_manifest,
)
from .tokenizer import Tokenizer

_VAL_SEED_OFFSET = 101
_TEST_SEED_OFFSET = 202


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _read_json(path: Path) -> Dict[str, Any]:
    return json.loads(path.read_text())


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def step_gen_data(cfg: RunConfig) -> Dict[str, Any]:
    corpus_dir = cfg.path("corpus")
    meta_path = corpus_dir / "gen_meta.json"
    if meta_path.exists():
        meta = _read_json(meta_path)
        if meta.get("config_hash") == cfg.hash:
            _log(f"gen-data: cache hit ({meta_path})")
            return {"step": "gen-data", "cache_hit": True, **meta["counts"]}
    task = cfg.section("task")
    corpus_dir.mkdir(parents=True, exist_ok=True)
    cfg.write_snapshot(corpus_dir)
    _log(f"gen-data: generating {task['train']}/{task['val']}/{task['test']} "
         f"{task['kind']} samples")
    kw = dict(kind=task["kind"], max_hops=task["max_hops"], min_hops=task["min_hops"])
    if task["kind"] == "chain":
        kw["false_target"] = task.get("false_target", "absent")
    train = gen_corpus(count=task["train"], corpus_seed=cfg.seed, **kw)
    seen = {s.question for s in train}
    val = gen_corpus(count=task["val"], corpus_seed=cfg.seed + _VAL_SEED_OFFSET,
                     exclude_questions=seen, **kw)
    seen |= {s.question for s in val}
    test = gen_corpus(count=task["test"], corpus_seed=cfg.seed + _TEST_SEED_OFFSET,
                      exclude_questions=seen, **kw)
    expand = task.get("expand", {})
    if expand.get("l_target", 0) > 0:
        _log(f"gen-data: expanding traces toward {expand['l_target']} chars")

        def grow(split):
            out = []
            for s in split:
                ecfg = ExpansionConfig(
                    l_target=expand["l_target"],
                    max_iters=expand.get("max_iters", 8),
                    expander=expander_for(task["kind"]),
                    judge=judge_for(task["kind"]),
                )
                out.append(expand_cot(s, ecfg))
            return out

        train, val, test = grow(train), grow(val), grow(test)
    files = {}
    for name, split in (("train", train), ("val", val), ("test", test)):
        path = corpus_dir / f"{name}.jsonl"
        write_manifest(split, path)
        files[name] = file_hash(path)
    counts = {"train": len(train), "val": len(val), "test": len(test)}
    _write_json(meta_path, {"config_hash": cfg.hash, "files": files, "counts": counts})
    return {"step": "gen-data", "cache_hit": False, **counts}


def _require(path: Path, artifact: str) -> Path:
    if not path.exists():
        raise DependencyError(artifact, str(path))
    return path


def _check_lineage(meta: Dict[str, Any], cfg: RunConfig, what: str) -> None:
    if meta.get("config_hash") != cfg.hash:
        raise LineageError(
            f"{what} was produced under config {meta.get('config_hash', '?')[:12]}, "
            f"current config is {cfg.hash[:12]}"
        )


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------


def _render_one(args):
    sample_id, cot, render_kwargs = args
    img = render(normalize_cot(cot), RenderConfig(**render_kwargs))
    return sample_id, img


def step_render(cfg: RunConfig, workers: int = 1) -> Dict[str, Any]:
    corpus_dir = cfg.path("corpus")
    train_path = _require(corpus_dir / "train.jsonl", "training corpus manifest")
    gen_meta = _read_json(_require(corpus_dir / "gen_meta.json", "gen-data metadata"))
    _check_lineage(gen_meta, cfg, "corpus")
    images_dir = cfg.path("images")
    meta_path = images_dir / "render_meta.json"
    corpus_hash = file_hash(train_path)
    if meta_path.exists():
        meta = _read_json(meta_path)
        if meta.get("config_hash") == cfg.hash and meta.get("corpus_hash") == corpus_hash:
            _log(f"render: cache hit ({meta_path})")
            return {"step": "render", "cache_hit": True, "images": meta["count"]}
    samples = read_manifest(train_path)
    images_dir.mkdir(parents=True, exist_ok=True)
    cfg.write_snapshot(images_dir)
    rkw = cfg.section("render")
    _log(f"render: {len(samples)} images at {rkw['width']}x{rkw['height']} "
         f"(workers={workers})")
    jobs = [(s.sample_id, s.cot, rkw) for s in samples]
    if workers > 1:
        from multiprocessing import Pool

        with Pool(workers) as pool:
            results = pool.map(_render_one, jobs, chunksize=16)
    else:
        results = map(_render_one, jobs)
    manifest_lines = []
    count = 0
    for sample_id, img in results:
        write_pgm(img.pixels, images_dir / f"{sample_id}.pgm")
        manifest_lines.append(
            json.dumps(
                {
                    "sample_id": sample_id,
                    "f": img.font_size,
                    "L": img.line_count,
                    "m": img.chars_per_line,
                    "Q": img.quality,
                    "iterations": img.iterations,
                    "config_hash": cfg.hash,
                },
                sort_keys=True,
            )
        )
        count += 1
        if count % 1000 == 0:
            _log(f"render: {count}/{len(samples)}")
    (images_dir / "render_manifest.jsonl").write_text("\n".join(manifest_lines) + "\n")
    _write_json(meta_path, {"config_hash": cfg.hash, "corpus_hash": corpus_hash,
                            "count": count})
    return {"step": "render", "cache_hit": False, "images": count}


# ---------------------------------------------------------------------------
# tokenizer / model construction
# ---------------------------------------------------------------------------


def build_tokenizer(cfg: RunConfig) -> Tokenizer:
    corpus_dir = cfg.path("corpus")
    texts: List[str] = []
    for name in ("train", "val", "test"):
        for s in read_manifest(_require(corpus_dir / f"{name}.jsonl", f"{name} manifest")):
            texts.append(f"{s.question} {s.cot} {s.answer}")
    return Tokenizer.from_texts(texts).extend_with_latent_tokens()


def _build_seeded_model(cfg: RunConfig) -> tuple:
    tok = build_tokenizer(cfg)
    m = cfg.section("model")
    base = Tokenizer(tokens=tok.tokens[:-3])  # without latent specials
    model = MicroTransformer(
        ModelConfig(
            vocab_size=base.vocab_size,
            hidden_dim=m["hidden_dim"],
            layers=m["layers"],
            heads=m["heads"],
            max_seq_len=m["max_seq_len"],
            mlp_ratio=m["mlp_ratio"],
            rng_seed=cfg.seed,
        )
    )
    model, tok2 = init_special_tokens(model, base)
    assert tok2.tokens == tok.tokens
    return model, tok2


def ensure_init_checkpoint(cfg: RunConfig) -> Path:
    """Create (or reuse) the deterministic seeded trainee start checkpoint
    with latent tokens already added."""
    ckpt_dir = cfg.path("checkpoints")
    init_path = ckpt_dir / "init.olmc"
    if init_path.exists():
        return init_path
    model, tok = _build_seeded_model(cfg)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, tok, "init", init_path)
    _log(f"init checkpoint written: {init_path}")
    return init_path


def ensure_extractor_checkpoint(cfg: RunConfig) -> Path:
    """Create (or reuse) the default frozen backbone for target extraction.

    Same architecture and tokenizer as the trainee, but the attention and
    feed-forward weights are re-drawn at a larger seeded scale so the
    forward genuinely mixes visual content into the read position; at the
    trainee's 0.02 init (and even after stage-1 text training) the read
    state is dominated by the final patch and targets collapse together.
    """
    ckpt_dir = cfg.path("checkpoints")
    path = ckpt_dir / "extractor.olmc"
    if path.exists():
        return path
    model, tok = _build_seeded_model(cfg)
    mix_std = float(cfg.section("frontend")["backbone_mix_std"])
    rng = np.random.Generator(np.random.PCG64(cfg.seed * 7919 + 13))
    for name, p in model.params.items():
        if name.endswith(("w_qkv", "w_o", "w_fc1", "w_fc2")):
            p.data = rng.normal(0.0, mix_std, size=p.data.shape)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, tok, "extractor", path)
    _log(f"extractor checkpoint written: {path}")
    return path


# ---------------------------------------------------------------------------
# extract-targets
# ---------------------------------------------------------------------------


def _max_pairwise_cosine(mat: np.ndarray, block: int = 512) -> float:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    unit = mat / np.maximum(norms, 1e-300)
    n = unit.shape[0]
    best = -1.0
    for i in range(0, n, block):
        a = unit[i : i + block]
        sims = a @ unit.T
        for r in range(a.shape[0]):
            sims[r, i + r] = -1.0  # mask self-similarity
        best = max(best, float(sims.max()))
    return best


def step_extract_targets(cfg: RunConfig, frozen_ckpt: Optional[Path] = None) -> Dict[str, Any]:
    corpus_dir = cfg.path("corpus")
    images_dir = cfg.path("images")
    train_path = _require(corpus_dir / "train.jsonl", "training corpus manifest")
    render_meta = _read_json(_require(images_dir / "render_meta.json", "render metadata"))
    _check_lineage(render_meta, cfg, "rendered images")
    targets_path = cfg.path("targets")
    meta_path = targets_path.with_suffix(targets_path.suffix + ".meta.json")
    images_hash = file_hash(images_dir / "render_manifest.jsonl")
    if frozen_ckpt is None:
        frozen_ckpt = ensure_extractor_checkpoint(cfg)
    frozen_hash_hex = checkpoint_hash(frozen_ckpt).hex()
    if meta_path.exists():
        meta = _read_json(meta_path)
        if (
            meta.get("config_hash") == cfg.hash
            and meta.get("images_hash") == images_hash
            and meta.get("frozen_hash") == frozen_hash_hex
        ):
            _log(f"extract-targets: cache hit ({meta_path})")
            return {"step": "extract-targets", "cache_hit": True,
                    "count": meta["count"], "max_cosine": meta["max_cosine"]}

    model, tok, _stage = load_checkpoint(frozen_ckpt)
    model.set_trainable(False)
    fe_cfg = cfg.section("frontend")
    fe = PatchStatsFrontEnd(
        grid_size=fe_cfg["grid_size"],
        out_dim=model.config.hidden_dim,
        seed=fe_cfg["seed"],
        subgrid=fe_cfg["subgrid"],
    )
    samples = read_manifest(train_path)
    from .render import read_pgm

    digest = checkpoint_hash(frozen_ckpt)
    targets: List[TargetVector] = []
    for i, s in enumerate(samples):
        pixels = read_pgm(_require(images_dir / f"{s.sample_id}.pgm", "rendered image"))
        targets.append(
            extract_target(pixels, fe, model, tok.bos_id, tok.pad_id, s.sample_id, digest)
        )
        if (i + 1) % 500 == 0:
            _log(f"extract-targets: {i + 1}/{len(samples)}")
    store_targets(targets, targets_path)
    mat = np.stack([t.v for t in targets])
    max_cos = _max_pairwise_cosine(mat)
    _log(f"extract-targets: corpus max pairwise cosine = {max_cos:.6f}")
    _write_json(
        meta_path,
        {
            "config_hash": cfg.hash,
            "images_hash": images_hash,
            "frozen_hash": frozen_hash_hex,
            "count": len(targets),
            "max_cosine": max_cos,
        },
    )
    return {"step": "extract-targets", "cache_hit": False, "count": len(targets),
            "max_cosine": max_cos}


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _eval_hook_for(cfg: RunConfig, tok: Tokenizer, mode: str):
    corpus_dir = cfg.path("corpus")
    val = read_manifest(corpus_dir / "val.jsonl")[: cfg.section("eval")["val_samples"]]
    ev = cfg.section("eval")
    latent_cfg = LatentConfig.from_tokenizer(tok, cfg.section("latent")["n_latents"])
    budget = ev["decode_budget_cot"] if mode == "cot" else ev["decode_budget_latent"]
    normalizer = _normalizer_for(cfg)

    def hook(model: MicroTransformer, epoch: int) -> Dict[str, float]:
        report = run_eval(
            model, tok, val, latent_cfg, mode=mode, decode_budget=budget,
            normalizer=normalizer, benchmark="val",
            count_latents=ev["count_latents"], count_eos=ev["count_eos"],
        )
        return {"val_acc": report.accuracy, "val_avg_out": report.avg_out,
                "val_otc": report.otc}

    return hook


def _normalizer_for(cfg: RunConfig) -> AnswerNormalizer:
    kind = cfg.section("task")["kind"]
    marker = cfg.section("eval")["marker"]
    return AnswerNormalizer(
        family="hash-marker" if kind == "arith" else "final-sentence", marker=marker
    )


def step_train(cfg: RunConfig, stage: int) -> Dict[str, Any]:
    corpus_dir = cfg.path("corpus")
    ckpt_dir = cfg.path("checkpoints")
    logs_dir = cfg.path("logs")
    train_path = _require(corpus_dir / "train.jsonl", "training corpus manifest")
    corpus_hash = file_hash(train_path)
    out_path = ckpt_dir / f"stage{stage}.olmc"
    meta_path = ckpt_dir / f"stage{stage}_meta.json"

    if stage == 1:
        prev_path = ensure_init_checkpoint(cfg)
    else:
        prev_path = _require(ckpt_dir / f"stage{stage - 1}.olmc",
                             f"stage {stage - 1} checkpoint")
        prev_meta_path = ckpt_dir / f"stage{stage - 1}_meta.json"
        if prev_meta_path.exists():
            _check_lineage(_read_json(prev_meta_path), cfg,
                           f"stage {stage - 1} checkpoint")
        else:
            raise LineageError(
                f"stage {stage - 1} checkpoint has no metadata; cannot verify lineage"
            )
    prev_hash = checkpoint_hash(prev_path).hex()

    targets = None
    targets_hash = None
    if stage == 2:
        targets_path = _require(cfg.path("targets"), "target store")
        store = load_targets(targets_path)
        targets_hash = file_hash(targets_path)

    if meta_path.exists() and out_path.exists():
        meta = _read_json(meta_path)
        if (
            meta.get("config_hash") == cfg.hash
            and meta.get("corpus_hash") == corpus_hash
            and meta.get("prev_ckpt_hash") == prev_hash
            and meta.get("targets_hash") == targets_hash
        ):
            _log(f"train --stage {stage}: cache hit ({out_path})")
            return {"step": f"train-{stage}", "cache_hit": True,
                    "checkpoint": str(out_path)}

    model, tok, _tag = load_checkpoint(prev_path)
    if stage == 2:
        # the frozen backbone must be one of this run's sanctioned sources:
        # the extractor snapshot (default), the trainee init, or stage 1
        candidates = [ckpt_dir / "extractor.olmc", ckpt_dir / "init.olmc",
                      ckpt_dir / "stage1.olmc"]
        valid_hashes = [checkpoint_hash(c) for c in candidates if c.exists()]
        match = next((h for h in valid_hashes if h == store.frozen_hash), None)
        if match is None:
            from .errors import StaleTargetError

            raise StaleTargetError(
                "target store frozen backbone does not match this run's extractor, "
                "init, or stage-1 checkpoint"
            )
        store.validate_for(model.config.hidden_dim, match)
        targets = store.vectors

    samples = read_manifest(train_path)
    scfg_raw = cfg.stage_cfg(stage)
    latent = cfg.section("latent")
    scfg = StageConfig(
        stage=stage,
        epochs=scfg_raw["epochs"],
        learning_rate=scfg_raw["learning_rate"],
        lambda_mse=scfg_raw.get("lambda_mse", 1.0),
        batch_size=scfg_raw["batch_size"],
        grad_accum=scfg_raw["grad_accum"],
        seed=cfg.seed + stage,
        n_latents=latent["n_latents"],
        stop_gradient=latent["stop_gradient"],
        layer_source=latent["layer_source"],
    )
    mode = "cot" if stage == 1 else "onelatent"
    logs_dir.mkdir(parents=True, exist_ok=True)
    log_path = logs_dir / f"train_stage{stage}.jsonl"
    log_fh = open(log_path, "w", encoding="utf-8")

    def log_hook(record: Dict) -> None:
        log_fh.write(json.dumps(record, sort_keys=True) + "\n")
        log_fh.flush()
        msg = (f"stage {stage} epoch {record['epoch']}: ntp={record['ntp']:.4f}"
               + (f" mse={record['mse']:.4f}" if record.get("mse") is not None else ""))
        if "val_acc" in record:
            msg += (f" val_acc={record['val_acc']:.2f}"
                    f" val_out={record['val_avg_out']:.2f} val_otc={record['val_otc']:.2f}")
        _log(msg)

    _log(f"train --stage {stage}: {len(samples)} samples, {scfg.epochs} epochs")
    try:
        model, metrics = run_stage(
            samples, model, tok, scfg, targets=targets,
            checkpoint_dir=ckpt_dir / f"stage{stage}_epochs",
            eval_hook=_eval_hook_for(cfg, tok, mode), log_hook=log_hook,
        )
    finally:
        log_fh.close()
    save_checkpoint(model, tok, f"stage{stage}", out_path)
    cfg.write_snapshot(ckpt_dir)
    _write_json(
        meta_path,
        {
            "config_hash": cfg.hash,
            "corpus_hash": corpus_hash,
            "prev_ckpt_hash": prev_hash,
            "targets_hash": targets_hash,
            "final_metrics": metrics[-1] if metrics else None,
        },
    )
    return {"step": f"train-{stage}", "cache_hit": False, "checkpoint": str(out_path),
            "epochs": len(metrics)}


# ---------------------------------------------------------------------------
# eval / report
# ---------------------------------------------------------------------------


def step_eval(
    cfg: RunConfig, mode: str, stage: int, checkpoint: Optional[Path] = None,
    split: str = "test",
) -> Dict[str, Any]:
    corpus_dir = cfg.path("corpus")
    reports_dir = cfg.path("reports")
    if checkpoint is None:
        checkpoint = cfg.path("checkpoints") / f"stage{stage}.olmc"
    _require(Path(checkpoint), f"stage {stage} checkpoint")
    samples = read_manifest(_require(corpus_dir / f"{split}.jsonl", f"{split} manifest"))
    model, tok, _tag = load_checkpoint(checkpoint)
    ev = cfg.section("eval")
    latent_cfg = LatentConfig.from_tokenizer(tok, cfg.section("latent")["n_latents"])
    budget = ev["decode_budget_cot"] if mode in ("cot", "nocot") else ev["decode_budget_latent"]
    _log(f"eval: stage {stage} mode {mode} on {len(samples)} {split} samples "
         f"(budget {budget})")
    report = run_eval(
        model, tok, samples, latent_cfg, mode=mode, decode_budget=budget,
        normalizer=_normalizer_for(cfg), benchmark=f"{cfg.section('task')['kind']}-{split}",
        count_latents=ev["count_latents"], count_eos=ev["count_eos"],
    )
    reports_dir.mkdir(parents=True, exist_ok=True)
    cfg.write_snapshot(reports_dir)
    stem = f"eval_stage{stage}_{mode}"
    envelope = {
        "config_hash": cfg.hash,
        "checkpoint_hash": checkpoint_hash(checkpoint).hex(),
        "stage": stage,
        "report": json.loads(report_to_json(report)),
    }
    _write_json(reports_dir / f"{stem}.json", envelope)
    (reports_dir / f"{stem}.csv").write_text(records_to_csv(report))
    _log(f"eval: Acc={report.accuracy:.2f} #O={report.avg_out:.2f} OTC={report.otc:.2f}")
    return {"step": "eval", "stage": stage, "mode": mode,
            "accuracy": report.accuracy, "avg_out": report.avg_out, "otc": report.otc}


def step_report(cfg: RunConfig) -> Dict[str, Any]:
    reports_dir = cfg.path("reports")
    files = sorted(reports_dir.glob("eval_stage*_*.json"))
    if not files:
        raise DependencyError("evaluation reports", str(reports_dir / "eval_stage*_*.json"))
    envelopes = [_read_json(f) for f in files]
    hashes = {e["config_hash"] for e in envelopes}
    if len(hashes) > 1:
        raise LineageError(f"mixed config lineages in {reports_dir}: {sorted(hashes)}")
    if envelopes[0]["config_hash"] != cfg.hash:
        raise LineageError("reports were produced under a different config")
    reports = {}
    for f, e in zip(files, envelopes):
        rep = report_from_json(json.dumps(e["report"]))
        reports[f.stem] = (e["stage"], rep)

    rows = []
    stage_rows = []
    for stem in sorted(reports):
        stage, rep = reports[stem]
        rows.append(rep)
        stage_rows.append(
            {"stage": stage, "mode": rep.mode, "accuracy": rep.accuracy,
             "avg_out": rep.avg_out, "latents": rep.n_latents, "otc": rep.otc}
        )
    payload: Dict[str, Any] = {"config_hash": cfg.hash, "stages": stage_rows}
    cot_key = next((k for k in sorted(reports) if reports[k][1].mode == "cot"), None)
    lat_keys = [k for k in sorted(reports) if reports[k][1].mode == "onelatent"]
    if cot_key and lat_keys:
        final_key = max(lat_keys, key=lambda k: reports[k][0])
        comp = compression_report(reports[cot_key][1], reports[final_key][1])
        payload["compression"] = comp
        reports[final_key][1].compression = comp
    if rows:
        payload["macro"] = macro_average(rows)
    _write_json(reports_dir / "report.json", payload)
    table = report_to_table(rows, payload.get("macro"))
    (reports_dir / "report.txt").write_text(table)
    _log("report written:\n" + table)
    return {"step": "report", "stages": len(stage_rows),
            "compression": payload.get("compression")}
