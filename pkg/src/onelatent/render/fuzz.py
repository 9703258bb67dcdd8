"""Deterministic fuzz corpus for renderer determinism audits.

Importable from subprocesses so cross-process byte-exactness can be
demonstrated against the same inputs.
"""

from __future__ import annotations

import random
from typing import List

_WORDS = (
    "step", "carry", "sum", "times", "alpha", "Zeta", "Quux", "007",
    "3.14", "x", "y2", "TOTAL", "therefore", "answer",
)
_LATEX = ("\\times", "\\leq", "\\geq", "\\div", "\\neq", "\\rightarrow", "\\cdot")
_UNICODE = ("×", "≤", "≥", "÷", "≠", "→", "·")
_PUNCT = (".", ",", ";", ":", "=", "+", "-", "(", ")", "#", "%", "?", "!")
_WS = (" ", "  ", "\t", "\n", " \n ", "   ")


def fuzz_cot_strings(seed: int, n: int) -> List[str]:
    rng = random.Random(seed)
    out: List[str] = []
    for _ in range(n):
        parts: List[str] = []
        for _ in range(rng.randint(1, 120)):
            kind = rng.random()
            if kind < 0.45:
                parts.append(rng.choice(_WORDS))
            elif kind < 0.55:
                parts.append(rng.choice(_LATEX))
            elif kind < 0.62:
                parts.append(rng.choice(_UNICODE))
            elif kind < 0.78:
                parts.append(str(rng.randint(0, 99999)))
            elif kind < 0.88:
                parts.append(rng.choice(_PUNCT))
            elif kind < 0.93:
                parts.append("{" + rng.choice(_WORDS) + "}")
            elif kind < 0.97:
                parts.append("$" + str(rng.randint(0, 999)) + "$")
            else:
                # overlong token exercising character-level splitting
                parts.append("".join(rng.choice("abcdefKLM408") for _ in range(rng.randint(60, 400))))
            parts.append(rng.choice(_WS))
        s = "".join(parts).strip() or "x"
        out.append(s)
    return out
