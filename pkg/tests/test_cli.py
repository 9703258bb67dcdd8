"""CLI pipeline integration on a miniature corpus."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from onelatent.cli import main

SMOKE_CONFIG = {
    "seed": 5,
    "task": {"kind": "chain", "train": 24, "val": 8, "test": 8, "max_hops": 3},
    "render": {"width": 256, "height": 256, "padding": 8},
    "model": {"hidden_dim": 32, "layers": 2, "heads": 2, "max_seq_len": 160},
    "frontend": {"grid_size": 8, "subgrid": 2, "seed": 77, "backbone_mix_std": 0.5},
    "stages": {
        "1": {"epochs": 1, "learning_rate": 3e-4, "batch_size": 8, "grad_accum": 1},
        "2": {"epochs": 1, "learning_rate": 3e-4, "batch_size": 8, "grad_accum": 1,
              "lambda_mse": 1.0},
        "3": {"epochs": 1, "learning_rate": 3e-4, "batch_size": 8, "grad_accum": 1},
    },
    "eval": {"decode_budget_latent": 6, "decode_budget_cot": 48, "val_samples": 4,
             "count_latents": True, "count_eos": True, "marker": "####"},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "config.json").write_text(json.dumps(SMOKE_CONFIG))
    return d


def _run(workdir: Path, *argv: str) -> int:
    return main(["--config", str(workdir / "config.json"), *argv])


def test_full_pipeline_sequence(workdir, capsys):
    for argv in (
        ["gen-data"],
        ["render"],
        ["extract-targets"],
        ["train", "--stage", "1"],
        ["train", "--stage", "2"],
        ["train", "--stage", "3"],
        ["eval", "--mode", "cot", "--stage", "1"],
        ["eval", "--mode", "onelatent", "--stage", "2"],
        ["eval", "--mode", "onelatent", "--stage", "3"],
        ["report"],
    ):
        assert _run(workdir, *argv) == 0, f"step {argv} failed"
        out = capsys.readouterr().out.strip().splitlines()[-1]
        json.loads(out)  # machine-readable stdout

    reports = workdir / "reports"
    assert (reports / "report.json").exists()
    assert (reports / "report.txt").exists()
    payload = json.loads((reports / "report.json").read_text())
    assert len(payload["stages"]) == 3
    assert payload["compression"]["cr"] == round(
        payload["compression"]["co"] / payload["compression"]["no"], 1
    )
    # per-sample CSVs exist alongside each eval report
    assert (reports / "eval_stage3_onelatent.csv").exists()


def test_second_run_is_cache_hit(workdir, capsys):
    assert _run(workdir, "render") == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["cache_hit"] is True


def test_eval_artifacts_carry_lineage(workdir):
    env = json.loads((workdir / "reports" / "eval_stage3_onelatent.json").read_text())
    assert set(env) >= {"config_hash", "checkpoint_hash", "report"}


def test_missing_prerequisite_exits_2(tmp_path, capsys):
    (tmp_path / "config.json").write_text(json.dumps(SMOKE_CONFIG))
    rc = main(["--config", str(tmp_path / "config.json"), "train", "--stage", "2"])
    assert rc == 2
    err = json.loads(capsys.readouterr().out)
    assert err["error"]["type"] == "dependency"
    assert "path" in err["error"]


def test_stage2_without_target_store_names_it(tmp_path, capsys):
    (tmp_path / "config.json").write_text(json.dumps(SMOKE_CONFIG))
    argv = ["--config", str(tmp_path / "config.json")]
    assert main(argv + ["gen-data"]) == 0
    assert main(argv + ["train", "--stage", "1"]) == 0
    capsys.readouterr()
    rc = main(argv + ["train", "--stage", "2"])
    assert rc == 2
    err = json.loads(capsys.readouterr().out)
    assert err["error"]["artifact"] == "target store"
    assert err["error"]["path"].endswith("targets.olts")


def test_lineage_mismatch_exits_3(workdir, tmp_path, capsys):
    cfg2 = dict(SMOKE_CONFIG)
    cfg2["seed"] = 6
    alt = tmp_path / "alt.json"
    alt.write_text(json.dumps(cfg2))
    rc = main(["--config", str(alt), "--out-dir", str(workdir), "report"])
    assert rc == 3
    err = json.loads(capsys.readouterr().out)
    assert err["error"]["type"] == "lineage"


def test_env_var_supplies_config(workdir, monkeypatch, capsys):
    monkeypatch.setenv("ONELATENT_CONFIG", str(workdir / "config.json"))
    assert main(["render"]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["cache_hit"] is True


def test_installed_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "onelatent.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "gen-data" in proc.stdout
