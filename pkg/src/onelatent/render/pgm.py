"""Binary PGM (P5) read/write plus an inspection-only PNG exporter.

PGM is the canonical byte-exact fixture format; PNG output goes through
Pillow and carries no byte-exactness guarantee.
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np

__all__ = ["write_pgm", "read_pgm", "write_png"]


def write_pgm(pixels: np.ndarray, path: Union[str, Path]) -> None:
    if pixels.dtype != np.uint8 or pixels.ndim != 2:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    h, w = pixels.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path} is not a binary PGM (P5) file")
    fields = []
    idx = 2
    while len(fields) < 3:
        while idx < len(data) and data[idx : idx + 1].isspace():
            idx += 1
        if data[idx : idx + 1] == b"#":
            while idx < len(data) and data[idx] not in (10, 13):
                idx += 1
            continue
        start = idx
        while idx < len(data) and not data[idx : idx + 1].isspace():
            idx += 1
        fields.append(int(data[start:idx]))
    idx += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    payload = data[idx : idx + w * h]
    if len(payload) != w * h:
        raise ValueError(f"truncated PGM payload in {path}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)


def write_png(pixels: np.ndarray, path: Union[str, Path]) -> None:
    from PIL import Image

    Image.fromarray(pixels, mode="L").save(str(path))
