"""Run configuration, artifact paths, and lineage hashing.

A run is driven by one JSON config (all keys optional; see DEFAULTS).
Relative paths resolve against the config file's directory, or the out-dir
when no file is given. Every pipeline step writes a resolved-config
snapshot next to its outputs and stamps artifacts with the config hash
plus the hashes of its direct inputs, so `report` can refuse to combine
artifacts from different lineages.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from .errors import ContractViolation

__all__ = ["RunConfig", "DEFAULTS", "config_hash", "file_hash", "load_config"]

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "paths": {
        "corpus": "data",
        "images": "images",
        "targets": "targets.olts",
        "checkpoints": "checkpoints",
        "reports": "reports",
        "logs": "logs",
    },
    "task": {
        "kind": "chain",
        "train": 5000,
        "val": 200,
        "test": 500,
        "min_hops": 1,
        "max_hops": 8,
        "false_target": "absent",
    },
    "render": {
        "width": 1024,
        "height": 1024,
        "padding": 20,
        "f_min": 8,
        "f_max": 48,
        "dpi": 100,
        "quality_threshold": 0.95,
        "max_quality_iters": 3,
    },
    "model": {
        "hidden_dim": 128,
        "layers": 4,
        "heads": 4,
        "max_seq_len": 384,
        "mlp_ratio": 2,
    },
    "frontend": {"grid_size": 16, "subgrid": 2, "seed": 77, "backbone_mix_std": 0.5},
    "latent": {"n_latents": 1, "layer_source": "final", "stop_gradient": False},
    "stages": {
        "1": {"epochs": 3, "learning_rate": 3e-4, "batch_size": 8, "grad_accum": 1},
        "2": {"epochs": 4, "learning_rate": 3e-4, "batch_size": 8, "grad_accum": 1,
              "lambda_mse": 1.0},
        "3": {"epochs": 4, "learning_rate": 3e-4, "batch_size": 8, "grad_accum": 1},
    },
    "eval": {
        "decode_budget_latent": 6,
        "decode_budget_cot": 96,
        "val_samples": 128,
        "count_latents": True,
        "count_eos": True,
        "marker": "####",
    },
}


def _deep_merge(base: Dict, override: Dict) -> Dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def config_hash(resolved: Dict[str, Any]) -> str:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunConfig:
    raw: Dict[str, Any]
    base_dir: Path

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def section(self, name: str) -> Dict[str, Any]:
        return self.raw[name]

    def path(self, name: str) -> Path:
        p = Path(self.raw["paths"][name])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def stage_cfg(self, stage: int) -> Dict[str, Any]:
        return self.raw["stages"][str(stage)]

    def write_snapshot(self, directory: Path) -> Path:
        directory.mkdir(parents=True, exist_ok=True)
        snap = directory / "resolved_config.json"
        snap.write_text(json.dumps(self.raw, sort_keys=True, indent=2) + "\n")
        return snap


def load_config(
    config_path: Optional[Path],
    out_dir: Optional[Path] = None,
    seed: Optional[int] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    merged = DEFAULTS
    if config_path is not None:
        config_path = Path(config_path)
        if not config_path.exists():
            raise ContractViolation(f"config file not found: {config_path}")
        try:
            user = json.loads(config_path.read_text())
        except json.JSONDecodeError as e:
            raise ContractViolation(f"config is not valid JSON: {e}") from e
        merged = _deep_merge(DEFAULTS, user)
        base = config_path.resolve().parent
    else:
        base = Path.cwd()
    if out_dir is not None:
        base = Path(out_dir).resolve()
    if seed is not None:
        merged = _deep_merge(merged, {"seed": int(seed)})
    if overrides:
        merged = _deep_merge(merged, overrides)
    return RunConfig(raw=merged, base_dir=base)
