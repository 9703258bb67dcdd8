"""Command-line entry point.

Subcommands mirror the pipeline: gen-data, render, extract-targets,
train --stage {1,2,3}, eval --mode {nocot,cot,onelatent}, report.
Progress goes to stderr; machine-readable results (one JSON object) go to
stdout. Exit codes: 0 success, 2 missing prerequisite, 3 lineage mismatch,
1 anything else. The ONELATENT_CONFIG environment variable supplies the
default --config path.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import load_config
from .errors import DependencyError, LineageError
from . import pipeline


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="onelatent",
        description="Compress chain-of-thought reasoning into one latent token: "
        "data generation, deterministic rendering, target extraction, "
        "three-stage training, and evaluation.",
    )
    parser.add_argument("--config", type=Path,
                        default=os.environ.get("ONELATENT_CONFIG") or None,
                        help="JSON run config (default: $ONELATENT_CONFIG)")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("--out-dir", type=Path, default=None,
                        help="base directory for artifacts (default: config file "
                        "directory, else cwd)")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker processes for rendering (other steps run "
                        "sequentially at this scale)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="generate train/val/test corpora")
    sub.add_parser("render", help="rasterize training traces to PGM images")

    p_extract = sub.add_parser("extract-targets",
                               help="extract hidden-state targets from images")
    p_extract.add_argument("--frozen-lm", type=Path, default=None,
                           help="checkpoint for the frozen backbone "
                           "(default: the seeded init snapshot)")

    p_train = sub.add_parser("train", help="run one curriculum stage")
    p_train.add_argument("--stage", type=int, required=True, choices=(1, 2, 3))

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--mode", required=True, choices=("nocot", "cot", "onelatent"))
    p_eval.add_argument("--stage", type=int, required=True, choices=(1, 2, 3),
                        help="which stage checkpoint to evaluate")
    p_eval.add_argument("--checkpoint", type=Path, default=None,
                        help="explicit checkpoint path (default: stage checkpoint)")
    p_eval.add_argument("--split", default="test", choices=("val", "test"))

    sub.add_parser("report", help="combine eval outputs into the final report")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, out_dir=args.out_dir, seed=args.seed)
        if args.command == "gen-data":
            result = pipeline.step_gen_data(cfg)
        elif args.command == "render":
            result = pipeline.step_render(cfg, workers=max(1, args.workers))
        elif args.command == "extract-targets":
            result = pipeline.step_extract_targets(cfg, frozen_ckpt=args.frozen_lm)
        elif args.command == "train":
            result = pipeline.step_train(cfg, stage=args.stage)
        elif args.command == "eval":
            result = pipeline.step_eval(cfg, mode=args.mode, stage=args.stage,
                                        checkpoint=args.checkpoint, split=args.split)
        elif args.command == "report":
            result = pipeline.step_report(cfg)
        else:  # pragma: no cover - argparse enforces choices
            raise ValueError(f"unknown command {args.command}")
    except DependencyError as e:
        print(json.dumps({"error": {"type": "dependency", "artifact": e.artifact,
                                    "path": e.path, "message": str(e)}}))
        return 2
    except LineageError as e:
        print(json.dumps({"error": {"type": "lineage", "message": str(e)}}))
        return 3
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": {"type": type(e).__name__, "message": str(e)}}))
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
