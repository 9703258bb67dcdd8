from .canvas import RenderConfig, RenderedImage, TemplateMatchChecker, quality_check, render
from .pgm import read_pgm, write_pgm, write_png
from .text import chars_per_line, fit_font, line_gap, normalize_cot, wrap_text

__all__ = [
    "RenderConfig",
    "RenderedImage",
    "TemplateMatchChecker",
    "quality_check",
    "render",
    "read_pgm",
    "write_pgm",
    "write_png",
    "chars_per_line",
    "fit_font",
    "line_gap",
    "normalize_cot",
    "wrap_text",
]
