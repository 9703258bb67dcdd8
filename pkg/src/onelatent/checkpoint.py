"""Binary model checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  "OLMC"
    version u16      currently 1
    config  7 x i64  vocab_size, hidden_dim, layers, heads, max_seq_len,
                     mlp_ratio, rng_seed
    stage   u16 length + utf-8 tag ("init", "stage1", "stage2", "stage3")
    vocab   u32 count, then per token: u16 length + utf-8
    params  u32 count, then per parameter in the model's fixed order:
            u16 name length + utf-8 name, u8 ndim, ndim x u32 dims,
            raw little-endian float64 data

The sha256 of the file bytes is the checkpoint's identity for lineage and
stale-target checks.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .errors import ContractViolation
from .model import MicroTransformer, ModelConfig
from .tokenizer import Tokenizer

__all__ = ["save_checkpoint", "load_checkpoint", "checkpoint_hash", "model_bytes"]

MAGIC = b"OLMC"
VERSION = 1


def model_bytes(model: MicroTransformer, tokenizer: Tokenizer, stage: str) -> bytes:
    cfg = model.config
    if cfg.vocab_size != tokenizer.vocab_size:
        raise ContractViolation(
            f"model vocab {cfg.vocab_size} != tokenizer vocab {tokenizer.vocab_size}"
        )
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    out += struct.pack(
        "<7q",
        cfg.vocab_size,
        cfg.hidden_dim,
        cfg.layers,
        cfg.heads,
        cfg.max_seq_len,
        cfg.mlp_ratio,
        cfg.rng_seed,
    )
    tag = stage.encode("utf-8")
    out += struct.pack("<H", len(tag)) + tag
    out += struct.pack("<I", tokenizer.vocab_size)
    for token in tokenizer.tokens:
        tb = token.encode("utf-8")
        out += struct.pack("<H", len(tb)) + tb
    names = model.param_names()
    out += struct.pack("<I", len(names))
    for name in names:
        p = model.params[name]
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<B", p.data.ndim)
        for dim in p.data.shape:
            out += struct.pack("<I", dim)
        out += np.ascontiguousarray(p.data, dtype="<f8").tobytes()
    return bytes(out)


def save_checkpoint(
    model: MicroTransformer, tokenizer: Tokenizer, stage: str, path: Union[str, Path]
) -> bytes:
    """Write the checkpoint; returns its sha256 digest."""
    blob = model_bytes(model, tokenizer, stage)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).digest()


def checkpoint_hash(path: Union[str, Path]) -> bytes:
    return hashlib.sha256(Path(path).read_bytes()).digest()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise ContractViolation("truncated checkpoint")
        b = self.blob[self.off : self.off + n]
        self.off += n
        return b

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals if len(vals) > 1 else vals[0]


def load_checkpoint(path: Union[str, Path]) -> Tuple[MicroTransformer, Tokenizer, str]:
    blob = Path(path).read_bytes()
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise ContractViolation(f"{path} is not a model checkpoint (bad magic)")
    version = r.unpack("<H")
    if version != VERSION:
        raise ContractViolation(f"unsupported checkpoint version {version}")
    vocab_size, hidden_dim, layers, heads, max_seq_len, mlp_ratio, rng_seed = r.unpack("<7q")
    cfg = ModelConfig(
        vocab_size=vocab_size,
        hidden_dim=hidden_dim,
        layers=layers,
        heads=heads,
        max_seq_len=max_seq_len,
        mlp_ratio=mlp_ratio,
        rng_seed=rng_seed,
    )
    stage = r.take(r.unpack("<H")).decode("utf-8")
    n_tokens = r.unpack("<I")
    tokens = tuple(r.take(r.unpack("<H")).decode("utf-8") for _ in range(n_tokens))
    tokenizer = Tokenizer(tokens=tokens)
    model = MicroTransformer(cfg, init=False)
    n_params = r.unpack("<I")
    from .autograd import Tensor

    for _ in range(n_params):
        name = r.take(r.unpack("<H")).decode("utf-8")
        ndim = r.unpack("<B")
        shape = tuple(r.unpack("<I") for _ in range(ndim)) if ndim > 1 else (r.unpack("<I"),)
        count = int(np.prod(shape))
        data = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).copy()
        model.params[name] = Tensor(data, requires_grad=True)
    expected = MicroTransformer(cfg, init=True).param_names()
    if model.param_names() != expected:
        raise ContractViolation("checkpoint parameter order does not match model layout")
    return model, tokenizer, stage
