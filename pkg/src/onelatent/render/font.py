"""Compiled-in monospace bitmap font.

Glyphs are authored as 5x9 dot patterns (rows 0-6 cap/body zone, rows 7-8
descenders) and placed in a 6x12 cell (one blank spacing column, blank top
and bottom rows). The cell keeps the 1:2 width:height aspect that the
layout model assumes: a glyph drawn at font size f occupies floor(f/2) x f
pixels, scaled from the cell by nearest neighbor.

No system font stack is involved anywhere, which is what makes rendered
images byte-identical across machines.
"""

from __future__ import annotations

from typing import Dict, Tuple

import numpy as np

CELL_W = 6
CELL_H = 12
_GLYPH_W = 5
_GLYPH_H = 9
_ROW_OFFSET = 1  # glyph rows sit at cell rows 1..9

# fmt: off
_RAW: Dict[str, str] = {
    " ": "..... ..... ..... ..... ..... ..... ..... ..... .....",
    "!": "..#.. ..#.. ..#.. ..#.. ..#.. ..... ..#.. ..... .....",
    '"': ".#.#. .#.#. .#.#. ..... ..... ..... ..... ..... .....",
    "#": ".#.#. .#.#. ##### .#.#. ##### .#.#. .#.#. ..... .....",
    "$": "..#.. .#### #.#.. .###. ..#.# ####. ..#.. ..... .....",
    "%": "##..# ##..# ...#. ..#.. .#... #..## #..## ..... .....",
    "&": ".##.. #..#. #.#.. .#... #.#.# #..#. .##.# ..... .....",
    "'": "..#.. ..#.. .#... ..... ..... ..... ..... ..... .....",
    "(": "...#. ..#.. .#... .#... .#... ..#.. ...#. ..... .....",
    ")": ".#... ..#.. ...#. ...#. ...#. ..#.. .#... ..... .....",
    "*": "..... ..#.. #.#.# .###. #.#.# ..#.. ..... ..... .....",
    "+": "..... ..#.. ..#.. ##### ..#.. ..#.. ..... ..... .....",
    ",": "..... ..... ..... ..... ..... ..#.. ..#.. .#... .....",
    "-": "..... ..... ..... ##### ..... ..... ..... ..... .....",
    ".": "..... ..... ..... ..... ..... .##.. .##.. ..... .....",
    "/": "....# ....# ...#. ..#.. .#... #.... #.... ..... .....",
    "0": ".###. #...# #..## #.#.# ##..# #...# .###. ..... .....",
    "1": "..#.. .##.. ..#.. ..#.. ..#.. ..#.. .###. ..... .....",
    "2": ".###. #...# ....# ...#. ..#.. .#... ##### ..... .....",
    "3": "##### ...#. ..#.. ...#. ....# #...# .###. ..... .....",
    "4": "...#. ..##. .#.#. #..#. ##### ...#. ...#. ..... .....",
    "5": "##### #.... ####. ....# ....# #...# .###. ..... .....",
    "6": "..##. .#... #.... ####. #...# #...# .###. ..... .....",
    "7": "##### ....# ...#. ..#.. .#... .#... .#... ..... .....",
    "8": ".###. #...# #...# .###. #...# #...# .###. ..... .....",
    "9": ".###. #...# #...# .#### ....# ...#. .##.. ..... .....",
    ":": "..... .##.. .##.. ..... .##.. .##.. ..... ..... .....",
    ";": "..... .##.. .##.. ..... .##.. ..#.. .#... ..... .....",
    "<": "...#. ..#.. .#... #.... .#... ..#.. ...#. ..... .....",
    "=": "..... ..... ##### ..... ##### ..... ..... ..... .....",
    ">": ".#... ..#.. ...#. ....# ...#. ..#.. .#... ..... .....",
    "?": ".###. #...# ....# ...#. ..#.. ..... ..#.. ..... .....",
    "@": ".###. #...# #.### #.#.# #.### #.... .###. ..... .....",
    "A": ".###. #...# #...# ##### #...# #...# #...# ..... .....",
    "B": "####. #...# #...# ####. #...# #...# ####. ..... .....",
    "C": ".###. #...# #.... #.... #.... #...# .###. ..... .....",
    "D": "####. #...# #...# #...# #...# #...# ####. ..... .....",
    "E": "##### #.... #.... ####. #.... #.... ##### ..... .....",
    "F": "##### #.... #.... ####. #.... #.... #.... ..... .....",
    "G": ".###. #...# #.... #.### #...# #...# .#### ..... .....",
    "H": "#...# #...# #...# ##### #...# #...# #...# ..... .....",
    "I": ".###. ..#.. ..#.. ..#.. ..#.. ..#.. .###. ..... .....",
    "J": "..### ...#. ...#. ...#. ...#. #..#. .##.. ..... .....",
    "K": "#...# #..#. #.#.. ##... #.#.. #..#. #...# ..... .....",
    "L": "#.... #.... #.... #.... #.... #.... ##### ..... .....",
    "M": "#...# ##.## #.#.# #.#.# #...# #...# #...# ..... .....",
    "N": "#...# ##..# #.#.# #..## #...# #...# #...# ..... .....",
    "O": ".###. #...# #...# #...# #...# #...# .###. ..... .....",
    "P": "####. #...# #...# ####. #.... #.... #.... ..... .....",
    "Q": ".###. #...# #...# #...# #.#.# #..#. .##.# ..... .....",
    "R": "####. #...# #...# ####. #.#.. #..#. #...# ..... .....",
    "S": ".#### #.... #.... .###. ....# ....# ####. ..... .....",
    "T": "##### ..#.. ..#.. ..#.. ..#.. ..#.. ..#.. ..... .....",
    "U": "#...# #...# #...# #...# #...# #...# .###. ..... .....",
    "V": "#...# #...# #...# #...# .#.#. .#.#. ..#.. ..... .....",
    "W": "#...# #...# #...# #.#.# #.#.# ##.## #...# ..... .....",
    "X": "#...# #...# .#.#. ..#.. .#.#. #...# #...# ..... .....",
    "Y": "#...# #...# .#.#. ..#.. ..#.. ..#.. ..#.. ..... .....",
    "Z": "##### ....# ...#. ..#.. .#... #.... ##### ..... .....",
    "[": ".###. .#... .#... .#... .#... .#... .###. ..... .....",
    "\\": "#.... #.... .#... ..#.. ...#. ....# ....# ..... .....",
    "]": ".###. ...#. ...#. ...#. ...#. ...#. .###. ..... .....",
    "^": "..#.. .#.#. #...# ..... ..... ..... ..... ..... .....",
    "_": "..... ..... ..... ..... ..... ..... ..... ##### .....",
    "`": ".#... ..#.. ..... ..... ..... ..... ..... ..... .....",
    "a": "..... ..... .###. ....# .#### #...# .#### ..... .....",
    "b": "#.... #.... ####. #...# #...# #...# ####. ..... .....",
    "c": "..... ..... .#### #.... #.... #.... .#### ..... .....",
    "d": "....# ....# .#### #...# #...# #...# .#### ..... .....",
    "e": "..... ..... .###. #...# ##### #.... .###. ..... .....",
    "f": "..##. .#..# .#... ###.. .#... .#... .#... ..... .....",
    "g": "..... ..... .#### #...# #...# #...# .#### ....# .###.",
    "h": "#.... #.... ####. #...# #...# #...# #...# ..... .....",
    "i": "..#.. ..... .##.. ..#.. ..#.. ..#.. .###. ..... .....",
    "j": "...#. ..... ..##. ...#. ...#. ...#. ...#. #..#. .##..",
    "k": "#.... #.... #..#. #.#.. ##... #.#.. #..#. ..... .....",
    "l": ".##.. ..#.. ..#.. ..#.. ..#.. ..#.. .###. ..... .....",
    "m": "..... ..... ##.#. #.#.# #.#.# #.#.# #.#.# ..... .....",
    "n": "..... ..... ####. #...# #...# #...# #...# ..... .....",
    "o": "..... ..... .###. #...# #...# #...# .###. ..... .....",
    "p": "..... ..... ####. #...# #...# #...# ####. #.... #....",
    "q": "..... ..... .#### #...# #...# #...# .#### ....# ....#",
    "r": "..... ..... #.##. ##..# #.... #.... #.... ..... .....",
    "s": "..... ..... .#### #.... .###. ....# ####. ..... .....",
    "t": ".#... .#... ###.. .#... .#... .#..# ..##. ..... .....",
    "u": "..... ..... #...# #...# #...# #...# .#### ..... .....",
    "v": "..... ..... #...# #...# #...# .#.#. ..#.. ..... .....",
    "w": "..... ..... #...# #...# #.#.# #.#.# .#.#. ..... .....",
    "x": "..... ..... #...# .#.#. ..#.. .#.#. #...# ..... .....",
    "y": "..... ..... #...# #...# #...# #...# .#### ....# .###.",
    "z": "..... ..... ##### ...#. ..#.. .#... ##### ..... .....",
    "{": "...## ..#.. ..#.. .#... ..#.. ..#.. ...## ..... .....",
    "|": "..#.. ..#.. ..#.. ..#.. ..#.. ..#.. ..#.. ..... .....",
    "}": "##... ..#.. ..#.. ...#. ..#.. ..#.. ##... ..... .....",
    "~": "..... ..... .#..# #.#.# #..#. ..... ..... ..... .....",
    "×": "..... #...# .#.#. ..#.. .#.#. #...# ..... ..... .....",   # ×
    "÷": "..... ..#.. ..... ##### ..... ..#.. ..... ..... .....",   # ÷
    "·": "..... ..... ..... .##.. .##.. ..... ..... ..... .....",   # ·
    "≤": "...#. ..#.. .#... ..#.. ...#. ..... ##### ..... .....",   # ≤
    "≥": ".#... ..#.. ...#. ..#.. .#... ..... ##### ..... .....",   # ≥
    "≠": "....# ..#.. ##### ..#.. ##### ..#.. #.... ..... .....",   # ≠
    "→": "..... ..#.. ...#. ##### ...#. ..#.. ..... ..... .....",   # →
}
# fmt: on

# Unknown characters render as a hollow box so they stay visible and distinct
# from every authored glyph.
_REPLACEMENT = "##### #...# #...# #...# #...# #...# ##### ..... ....."

_CELLS: Dict[str, np.ndarray] = {}
_SCALED: Dict[Tuple[str, int, int], np.ndarray] = {}


def _parse(pattern: str) -> np.ndarray:
    rows = pattern.split()
    if len(rows) != _GLYPH_H or any(len(r) != _GLYPH_W for r in rows):
        raise ValueError(f"malformed glyph pattern: {pattern!r}")
    cell = np.zeros((CELL_H, CELL_W), dtype=bool)
    for y, row in enumerate(rows):
        for x, c in enumerate(row):
            if c == "#":
                cell[_ROW_OFFSET + y, x] = True
    return cell


def glyph_cell(ch: str) -> np.ndarray:
    """(CELL_H, CELL_W) bool ink mask for one character."""
    cell = _CELLS.get(ch)
    if cell is None:
        cell = _parse(_RAW.get(ch, _REPLACEMENT))
        _CELLS[ch] = cell
    return cell


def scaled_glyph(ch: str, cw: int, fh: int) -> np.ndarray:
    """Glyph ink mask scaled to (fh, cw) by nearest neighbor."""
    key = (ch, cw, fh)
    out = _SCALED.get(key)
    if out is None:
        cell = glyph_cell(ch)
        ys = (np.arange(fh) * CELL_H) // fh
        xs = (np.arange(cw) * CELL_W) // cw
        out = cell[np.ix_(ys, xs)]
        _SCALED[key] = out
    return out


def known_chars() -> Tuple[str, ...]:
    return tuple(_RAW.keys())
