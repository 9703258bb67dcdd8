"""Hidden-state target extraction from rendered images, plus the binary store.

The pluggable vision front-end is kept deliberately simple: interpretable
per-patch statistics followed by a frozen seeded projection to the model
width. Targets are the frozen backbone's final hidden state at the last
visual position after forwarding [BOS-embedding; visual embeddings], and
they are persisted in the "OLTS" store:

    magic   4 bytes  "OLTS"
    version u16      currently 1
    d       u32      vector width
    count   u64      number of records
    frozen  32 bytes sha256 of the frozen backbone checkpoint
    fe_seed u64      front-end projection seed
    records, sorted by sample_id:
            u16 id length + utf-8 id, d x little-endian float64

Training never reads image files; it consumes only this store.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Union

import numpy as np

from .errors import ContractViolation, StaleTargetError
from .model import MicroTransformer

__all__ = [
    "PatchStatsFrontEnd",
    "TargetVector",
    "TargetStore",
    "encode_image",
    "extract_target",
]

STORE_MAGIC = b"OLTS"
STORE_VERSION = 1


class PatchStatsFrontEnd:
    """Deterministic stand-in for a pretrained vision encoder.

    Splits the (background-padded) image into a grid_size x grid_size patch
    grid and computes four statistics per patch: mean intensity, horizontal
    and vertical edge energy, and ink fraction. The statistics are measured
    on a subgrid x subgrid subdivision of each patch (per-patch feature dim
    k = 4 * subgrid^2), which is what lets targets distinguish texts that
    differ only in glyph identity. Features are standardized across the
    image's patches, then projected to the model width by a frozen seeded
    matrix. Identical images always produce identical embedding sequences.
    """

    N_BASE_STATS = 4

    def __init__(self, grid_size: int, out_dim: int, seed: int, subgrid: int = 2):
        if grid_size < 1 or out_dim < 1 or subgrid < 1:
            raise ContractViolation("grid_size, out_dim and subgrid must be positive")
        self.grid_size = grid_size
        self.out_dim = out_dim
        self.seed = seed
        self.subgrid = subgrid
        self.n_features = self.N_BASE_STATS * subgrid * subgrid
        rng = np.random.Generator(np.random.PCG64(seed))
        self.projection = rng.normal(
            0.0, 1.0 / np.sqrt(self.n_features), size=(self.n_features, out_dim)
        )

    def patch_stats(self, pixels: np.ndarray) -> np.ndarray:
        g = self.grid_size
        gg = g * self.subgrid
        h, w = pixels.shape
        ph = -(-h // gg) * gg  # pad up to a multiple of the fine tiling
        pw = -(-w // gg) * gg
        if (ph, pw) != (h, w):
            padded = np.full((ph, pw), 255, dtype=np.uint8)
            padded[:h, :w] = pixels
            pixels = padded
        x = pixels.astype(np.float64) / 255.0
        sh, sw = ph // gg, pw // gg
        tiles = x.reshape(gg, sh, gg, sw)
        mean = tiles.mean(axis=(1, 3))
        # gradients are zero-padded back to full size so the same tiling applies
        gx = np.zeros_like(x)
        gx[:, 1:] = np.abs(np.diff(x, axis=1))
        gy = np.zeros_like(x)
        gy[1:, :] = np.abs(np.diff(x, axis=0))
        hedge = gx.reshape(gg, sh, gg, sw).mean(axis=(1, 3))
        vedge = gy.reshape(gg, sh, gg, sw).mean(axis=(1, 3))
        ink = (tiles < 0.5).mean(axis=(1, 3))
        fine = np.stack([mean, hedge, vedge, ink], axis=-1)  # (gg, gg, 4)
        s = self.subgrid
        stats = (
            fine.reshape(g, s, g, s, self.N_BASE_STATS)
            .transpose(0, 2, 1, 3, 4)
            .reshape(g * g, self.n_features)
        )
        mu = stats.mean(axis=0, keepdims=True)
        sd = stats.std(axis=0, keepdims=True)
        return (stats - mu) / (sd + 1e-12)

    def __call__(self, pixels: np.ndarray) -> np.ndarray:
        return self.patch_stats(pixels) @ self.projection


def encode_image(pixels: np.ndarray, fe: PatchStatsFrontEnd) -> np.ndarray:
    """(grid_size^2, d) visual embedding sequence for one image."""
    emb = fe(pixels)
    if emb.shape != (fe.grid_size**2, fe.out_dim):
        raise ContractViolation(f"front-end produced shape {emb.shape}")
    return emb


@dataclass
class TargetVector:
    sample_id: str
    v: np.ndarray
    frozen_hash: bytes
    fe_seed: int


def extract_target(
    pixels: np.ndarray,
    fe: PatchStatsFrontEnd,
    frozen_lm: MicroTransformer,
    bos_id: int,
    pad_id: int,
    sample_id: str,
    frozen_hash: bytes,
    position: str = "last_visual",
) -> TargetVector:
    """Forward [BOS; visual embeddings] through the frozen backbone and read
    the final hidden state at the last visual position."""
    if not frozen_lm.frozen:
        raise ContractViolation("extract_target requires the backbone in frozen mode")
    if fe.out_dim != frozen_lm.config.hidden_dim:
        raise ContractViolation(
            f"front-end dim {fe.out_dim} != model hidden dim {frozen_lm.config.hidden_dim}"
        )
    emb = encode_image(pixels, fe)
    n_vis = emb.shape[0]
    ids = [bos_id] + [pad_id] * n_vis
    overrides = {i + 1: emb[i] for i in range(n_vis)}
    trace = frozen_lm.forward(ids, overrides=overrides, need_logits=False)
    if position == "last_visual":
        idx = n_vis  # position of the last visual embedding
    elif position == "last":
        idx = len(ids) - 1
    else:
        raise ContractViolation(f"unknown target position: {position}")
    v = trace.final_hidden.data[idx].copy()
    return TargetVector(sample_id=sample_id, v=v, frozen_hash=frozen_hash, fe_seed=fe.seed)


@dataclass
class TargetStore:
    d: int
    frozen_hash: bytes
    fe_seed: int
    vectors: Dict[str, np.ndarray]

    def validate_for(self, model_d: int, frozen_hash: bytes) -> None:
        if self.d != model_d:
            raise StaleTargetError(
                f"target store width {self.d} does not match model width {model_d}"
            )
        if self.frozen_hash != frozen_hash:
            raise StaleTargetError(
                "target store was extracted with a different frozen backbone "
                f"({self.frozen_hash.hex()[:12]} vs {frozen_hash.hex()[:12]})"
            )

    def __len__(self) -> int:
        return len(self.vectors)


def store_targets(targets: Iterable[TargetVector], path: Union[str, Path]) -> None:
    items: List[TargetVector] = sorted(targets, key=lambda t: t.sample_id)
    if not items:
        raise ContractViolation("refusing to write an empty target store")
    d = items[0].v.shape[0]
    frozen_hash = items[0].frozen_hash
    fe_seed = items[0].fe_seed
    out = bytearray()
    out += STORE_MAGIC
    out += struct.pack("<H", STORE_VERSION)
    out += struct.pack("<I", d)
    out += struct.pack("<Q", len(items))
    if len(frozen_hash) != 32:
        raise ContractViolation("frozen hash must be 32 bytes (sha256)")
    out += frozen_hash
    out += struct.pack("<Q", fe_seed)
    seen = set()
    for t in items:
        if t.v.shape != (d,):
            raise ContractViolation(f"inconsistent target width for {t.sample_id}")
        if t.frozen_hash != frozen_hash or t.fe_seed != fe_seed:
            raise ContractViolation("mixed extraction metadata in one store")
        if t.sample_id in seen:
            raise ContractViolation(f"duplicate sample_id {t.sample_id}")
        seen.add(t.sample_id)
        sid = t.sample_id.encode("utf-8")
        out += struct.pack("<H", len(sid)) + sid
        out += np.ascontiguousarray(t.v, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_targets(path: Union[str, Path]) -> TargetStore:
    blob = Path(path).read_bytes()
    off = 0
    if blob[:4] != STORE_MAGIC:
        raise StaleTargetError(f"{path} is not a target store (bad magic)")
    off = 4
    (version,) = struct.unpack_from("<H", blob, off)
    off += 2
    if version != STORE_VERSION:
        raise StaleTargetError(f"unsupported target store version {version}")
    (d,) = struct.unpack_from("<I", blob, off)
    off += 4
    (count,) = struct.unpack_from("<Q", blob, off)
    off += 8
    frozen_hash = blob[off : off + 32]
    off += 32
    (fe_seed,) = struct.unpack_from("<Q", blob, off)
    off += 8
    vectors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        sid = blob[off : off + id_len].decode("utf-8")
        off += id_len
        v = np.frombuffer(blob[off : off + 8 * d], dtype="<f8").copy()
        if v.shape != (d,):
            raise StaleTargetError(f"truncated record for {sid}")
        off += 8 * d
        vectors[sid] = v
    if off != len(blob):
        raise StaleTargetError(f"trailing bytes in target store {path}")
    return TargetStore(d=d, frozen_hash=frozen_hash, fe_seed=fe_seed, vectors=vectors)
