"""Vision front-end statistics, extraction determinism, and the target store."""

import hashlib

import numpy as np
import pytest

from onelatent.errors import ContractViolation, StaleTargetError
from onelatent.render import RenderConfig, normalize_cot, render
from onelatent.targets import (
    PatchStatsFrontEnd,
    TargetVector,
    encode_image,
    extract_target,
    load_targets,
    store_targets,
)

from conftest import tiny_model, tiny_tokenizer


def test_patch_grid_arithmetic():
    fe = PatchStatsFrontEnd(grid_size=16, out_dim=32, seed=1)
    img = np.full((1024, 1024), 255, dtype=np.uint8)
    emb = encode_image(img, fe)
    assert emb.shape == (256, 32)
    # 1024/16 = 64x64 patches: confirm stats see the right cell
    img2 = img.copy()
    img2[0:64, 0:64] = 0  # ink exactly in patch (0, 0)
    stats = fe.patch_stats(img2)
    raw_ink = (img2 < 128).reshape(16, 64, 16, 64).mean(axis=(1, 3)).reshape(-1)
    assert raw_ink[0] == 1.0 and raw_ink[1:].max() == 0.0
    assert np.argmax(stats[:, 3]) == 0


def test_all_white_image_gives_identical_embeddings():
    fe = PatchStatsFrontEnd(grid_size=8, out_dim=16, seed=2)
    emb = encode_image(np.full((256, 256), 255, dtype=np.uint8), fe)
    assert np.max(np.abs(emb - emb[0])) == 0.0


def test_padding_to_grid_multiple():
    fe = PatchStatsFrontEnd(grid_size=8, out_dim=16, seed=2)
    emb = encode_image(np.full((250, 251), 255, dtype=np.uint8), fe)
    assert emb.shape == (64, 16)


def test_single_character_perturbation_changes_embeddings():
    cfg = RenderConfig(width=512, height=512, padding=8)
    fe = PatchStatsFrontEnd(grid_size=16, out_dim=24, seed=3)
    rng = np.random.default_rng(0)
    words = ["alpha", "beta", "gamma", "delta", "omega", "sigma"]
    changed = 0
    for trial in range(50):
        base = " ".join(rng.choice(words) for _ in range(12))
        alt = list(base)
        idx = int(rng.integers(0, len(alt)))
        alt[idx] = "x" if alt[idx] != "x" else "y"
        alt = "".join(alt)
        e1 = encode_image(render(normalize_cot(base), cfg).pixels, fe)
        e2 = encode_image(render(normalize_cot(alt), cfg).pixels, fe)
        if not np.array_equal(e1, e2):
            changed += 1
    assert changed == 50


def test_extraction_deterministic_and_frozen(rng):
    tok = tiny_tokenizer()
    model = tiny_model(tok)
    model.set_trainable(False)
    fe = PatchStatsFrontEnd(grid_size=4, out_dim=model.config.hidden_dim, seed=7)
    img = render(normalize_cot("a b c"), RenderConfig(width=256, height=256, padding=8))
    digest = hashlib.sha256(b"frozen").digest()
    before = {k: v.data.copy() for k, v in model.params.items()}
    t1 = extract_target(img.pixels, fe, model, tok.bos_id, tok.pad_id, "s1", digest)
    t2 = extract_target(img.pixels, fe, model, tok.bos_id, tok.pad_id, "s1", digest)
    assert np.array_equal(t1.v, t2.v)
    assert t1.v.shape == (model.config.hidden_dim,)
    for k, v in model.params.items():
        assert np.array_equal(v.data, before[k])


def test_extraction_requires_frozen_model(rng):
    tok = tiny_tokenizer()
    model = tiny_model(tok)  # trainable
    fe = PatchStatsFrontEnd(grid_size=4, out_dim=model.config.hidden_dim, seed=7)
    img = np.full((64, 64), 255, dtype=np.uint8)
    with pytest.raises(ContractViolation):
        extract_target(img, fe, model, tok.bos_id, tok.pad_id, "s", b"\x00" * 32)


def test_extraction_position_is_last_visual(rng):
    tok = tiny_tokenizer()
    model = tiny_model(tok)
    model.set_trainable(False)
    fe = PatchStatsFrontEnd(grid_size=4, out_dim=model.config.hidden_dim, seed=7)
    img = render(normalize_cot("a b"), RenderConfig(width=256, height=256, padding=8))
    t = extract_target(img.pixels, fe, model, tok.bos_id, tok.pad_id, "s", b"\x00" * 32)
    emb = encode_image(img.pixels, fe)
    ids = [tok.bos_id] + [tok.pad_id] * emb.shape[0]
    trace = model.forward(ids, overrides={i + 1: emb[i] for i in range(emb.shape[0])})
    assert np.array_equal(t.v, trace.final_hidden.data[emb.shape[0]])


def test_store_round_trip_bit_exact(tmp_path, rng):
    d = 24
    digest = hashlib.sha256(b"model").digest()
    targets = [
        TargetVector(f"id-{i:03d}", rng.standard_normal(d), digest, fe_seed=5)
        for i in range(100)
    ]
    path = tmp_path / "t.olts"
    store_targets(targets, path)
    back = load_targets(path)
    assert back.d == d and back.fe_seed == 5 and back.frozen_hash == digest
    assert len(back) == 100
    for t in targets:
        assert np.array_equal(back.vectors[t.sample_id], t.v)


def test_store_size_formula(tmp_path, rng):
    d = 16
    digest = hashlib.sha256(b"m").digest()
    ids = [f"sample-{i:04d}" for i in range(7)]
    targets = [TargetVector(s, rng.standard_normal(d), digest, 9) for s in ids]
    path = tmp_path / "t.olts"
    store_targets(targets, path)
    header = 4 + 2 + 4 + 8 + 32 + 8
    records = sum(2 + len(s.encode()) + 8 * d for s in ids)
    assert path.stat().st_size == header + records


def test_stale_target_detection(tmp_path, rng):
    digest = hashlib.sha256(b"frozen-a").digest()
    targets = [TargetVector("x", rng.standard_normal(8), digest, 1)]
    path = tmp_path / "t.olts"
    store_targets(targets, path)
    store = load_targets(path)
    store.validate_for(8, digest)  # matching: fine
    with pytest.raises(StaleTargetError):
        store.validate_for(16, digest)  # written with d=8, consumed at d=16
    with pytest.raises(StaleTargetError):
        store.validate_for(8, hashlib.sha256(b"frozen-b").digest())


def test_store_rejects_mixed_metadata(tmp_path, rng):
    a = TargetVector("a", rng.standard_normal(4), hashlib.sha256(b"1").digest(), 1)
    b = TargetVector("b", rng.standard_normal(4), hashlib.sha256(b"2").digest(), 1)
    with pytest.raises(ContractViolation):
        store_targets([a, b], tmp_path / "t.olts")
