"""Fixed-canvas rasterization with an OCR-style quality-check loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from ..errors import ContractViolation, RenderOverflow
from .font import scaled_glyph
from .text import chars_per_line, fit_font, line_gap, normalize_cot

__all__ = ["RenderConfig", "RenderedImage", "render", "TemplateMatchChecker", "quality_check"]

_PAD_FLOOR = 4  # quality loop never shrinks padding below this


@dataclass(frozen=True)
class RenderConfig:
    width: int = 1024
    height: int = 1024
    padding: int = 20
    f_min: int = 8
    f_max: int = 48
    dpi: int = 100
    quality_threshold: float = 0.95
    max_quality_iters: int = 3

    def __post_init__(self):
        if self.width != self.height:
            raise ContractViolation("canvas must be square")
        if self.f_min > self.f_max:
            raise ContractViolation("f_min must not exceed f_max")
        if self.padding < 0 or 2 * self.padding >= min(self.width, self.height):
            raise ContractViolation("padding out of range")
        if not (0.0 <= self.quality_threshold <= 1.0):
            raise ContractViolation("quality threshold must lie in [0, 1]")
        if self.max_quality_iters < 1:
            raise ContractViolation("max_quality_iters must be >= 1")


@dataclass
class RenderedImage:
    width: int
    height: int
    pixels: np.ndarray  # uint8, 255 background, 0 ink
    font_size: int
    line_count: int
    chars_per_line: int
    line_gap: int
    padding_used: int
    lines: List[str]
    quality: float = 0.0
    iterations: int = 0
    fallback: bool = False
    degraded: bool = False


def _draw(lines: List[str], f: int, width: int, height: int, padding: int) -> np.ndarray:
    cw = f // 2
    g = line_gap(f)
    canvas = np.full((height, width), 255, dtype=np.uint8)
    for i, line in enumerate(lines):
        y = padding + i * (f + g)
        for j, ch in enumerate(line):
            if ch == " ":
                continue
            x = padding + j * cw
            mask = scaled_glyph(ch, cw, f)
            region = canvas[y : y + f, x : x + cw]
            region[mask] = 0
    return canvas


class TemplateMatchChecker:
    """Reference quality model: per-cell pixel agreement with the glyph
    templates the renderer itself uses. A real OCR engine can be slotted in
    behind the same callable interface.
    """

    def __init__(self, cell_threshold: float = 0.999):
        self.cell_threshold = cell_threshold

    def __call__(self, img: RenderedImage) -> float:
        f = img.font_size
        cw = f // 2
        g = img.line_gap
        p = img.padding_used
        total = 0
        matched = 0
        for i, line in enumerate(img.lines):
            y = p + i * (f + g)
            for j, ch in enumerate(line):
                if ch == " ":
                    continue
                total += 1
                x = p + j * cw
                region = img.pixels[y : y + f, x : x + cw]
                expected = np.where(scaled_glyph(ch, cw, f), 0, 255).astype(np.uint8)
                if region.shape != expected.shape:
                    continue
                agreement = float((region == expected).mean())
                if agreement >= self.cell_threshold:
                    matched += 1
        if total == 0:
            return 0.0
        return matched / total


def quality_check(img: RenderedImage) -> float:
    return TemplateMatchChecker()(img)


def render(
    s: str,
    cfg: RenderConfig,
    checker: Optional[Callable[[RenderedImage], float]] = None,
) -> RenderedImage:
    """Rasterize normalized text; re-render at reduced padding while the
    quality score stays below the threshold, returning the best attempt.
    """
    if s != normalize_cot(s):
        raise ContractViolation("render requires normalized text")
    if not s:
        raise ContractViolation("render requires non-empty text")
    if checker is None:
        checker = TemplateMatchChecker()

    pad = cfg.padding
    best: Optional[RenderedImage] = None
    for attempt in range(1, cfg.max_quality_iters + 1):
        f, lines, fallback = fit_font(s, cfg.width, cfg.height, pad, cfg.f_min, cfg.f_max)
        if fallback:
            g = line_gap(f)
            if len(lines) * (f + g) + 2 * pad > cfg.height:
                raise RenderOverflow(
                    f"text does not fit at f_min={cfg.f_min}: {len(lines)} lines of "
                    f"{chars_per_line(f, cfg.width, pad)} chars on a "
                    f"{cfg.width}x{cfg.height} canvas (padding {pad})"
                )
        img = RenderedImage(
            width=cfg.width,
            height=cfg.height,
            pixels=_draw(lines, f, cfg.width, cfg.height, pad),
            font_size=f,
            line_count=len(lines),
            chars_per_line=chars_per_line(f, cfg.width, pad),
            line_gap=line_gap(f),
            padding_used=pad,
            lines=lines,
            fallback=fallback,
            iterations=attempt,
        )
        img.quality = float(checker(img))
        if best is None or img.quality > best.quality:
            best = img
        if img.quality >= cfg.quality_threshold:
            return img
        new_pad = max(_PAD_FLOOR, pad // 2)
        if new_pad == pad:
            break
        pad = new_pad
    assert best is not None
    best.degraded = True
    return best
