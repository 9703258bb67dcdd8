"""Text normalization, wrapping, and the fit-to-canvas font search."""

from __future__ import annotations

import re
from typing import List, Tuple

from ..errors import ContractViolation

__all__ = ["normalize_cot", "wrap_text", "chars_per_line", "line_gap", "fit_font"]

# LaTeX-like tokens converted to their Unicode equivalents before rendering.
LATEX_TABLE = (
    ("\\times", "×"),
    ("\\leq", "≤"),
    ("\\geq", "≥"),
    ("\\div", "÷"),
    ("\\neq", "≠"),
    ("\\rightarrow", "→"),
    ("\\cdot", "·"),
)

_WS = re.compile(r"\s+")


def normalize_cot(s: str) -> str:
    """Collapse whitespace, map LaTeX-like tokens, strip markup characters.

    Total and idempotent: normalize(normalize(s)) == normalize(s).
    """
    for token, uni in LATEX_TABLE:
        s = s.replace(token, uni)
    s = s.replace("{", "").replace("}", "").replace("$", "")
    return _WS.sub(" ", s).strip()


def wrap_text(s: str, m: int) -> List[str]:
    """Greedy wrap at whitespace into lines of at most `m` characters.

    Words longer than `m` fall back to character-level splitting: they
    start on a fresh line and are cut into `m`-sized chunks.
    """
    if m < 1:
        raise ContractViolation(f"chars per line must be >= 1, got {m}")
    lines: List[str] = []
    cur = ""
    for word in s.split(" "):
        if not word:
            continue
        if len(word) > m:
            if cur:
                lines.append(cur)
                cur = ""
            for i in range(0, len(word), m):
                chunk = word[i : i + m]
                if len(chunk) == m:
                    lines.append(chunk)
                else:
                    cur = chunk
            continue
        if not cur:
            cur = word
        elif len(cur) + 1 + len(word) <= m:
            cur = cur + " " + word
        else:
            lines.append(cur)
            cur = word
    if cur:
        lines.append(cur)
    return lines or [""]


def chars_per_line(f: int, width: int, padding: int) -> int:
    """floor((W - 2p) / (f/2)) using exact integer arithmetic."""
    return (2 * (width - 2 * padding)) // f


def line_gap(f: int) -> int:
    return f // 4


def fit_font(
    s: str, width: int, height: int, padding: int, f_min: int, f_max: int
) -> Tuple[int, List[str], bool]:
    """Largest f in [f_min, f_max] whose wrapped lines satisfy
    L*(f+g)+2p <= H; falls back to f_min with trailing whitespace-only
    lines clipped.

    Returns (f, lines, fallback_used).
    """
    if not s:
        raise ContractViolation("fit_font requires non-empty text")
    for f in range(f_max, f_min - 1, -1):
        m = chars_per_line(f, width, padding)
        if m < 1:
            continue
        lines = wrap_text(s, m)
        if len(lines) * (f + line_gap(f)) + 2 * padding <= height:
            return f, lines, False
    m = chars_per_line(f_min, width, padding)
    if m < 1:
        raise ContractViolation(
            f"canvas too small: zero chars per line at f_min={f_min}"
        )
    lines = wrap_text(s, m)
    while lines and not lines[-1].strip():
        lines.pop()
    return f_min, lines, True
