"""Rendering sketches to SVG text and grayscale rasters."""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from ..errors import InvalidInputError
from .preprocess import count_strokes
from .types import SketchSequence


def _stroke_arrays(seq: SketchSequence) -> list[np.ndarray]:
    pts = seq.points[: seq.realized_length]
    return [pts[a:b, :2] for a, b in count_strokes(seq).strokes]


def render_svg(seq: SketchSequence, side: int = 256) -> str:
    """Render to SVG 1.1 text with one path element per stroke.

    The [-1, 1] canvas maps to a side x side viewport with a 5% margin.
    """
    if side < 2:
        raise InvalidInputError(f"side must be >= 2, got {side}")
    margin = 0.05 * side
    scale = (side - 2 * margin) / 2.0

    def to_px(xy: np.ndarray) -> np.ndarray:
        return (xy + 1.0) * scale + margin

    paths = []
    for stroke in _stroke_arrays(seq):
        px = to_px(stroke)
        coords = " ".join(f"L {x:.2f} {y:.2f}" for x, y in px[1:])
        d = f"M {px[0, 0]:.2f} {px[0, 1]:.2f}" + (" " + coords if len(px) > 1 else "")
        paths.append(f'  <path d="{d}" fill="none" stroke="black" stroke-width="1"/>')
    body = "\n".join(paths)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
            f'width="{side}" height="{side}" viewBox="0 0 {side} {side}">\n'
            f'{body}\n</svg>\n')


def render_raster(seq: SketchSequence, side: int = 128) -> np.ndarray:
    """Render to an 8-bit grayscale (side, side) array, black strokes on white.

    Strokes are drawn with 1-px lines; single-point strokes become single
    pixels.  The sketch is fitted with a 5% margin.
    """
    if side < 2:
        raise InvalidInputError(f"side must be >= 2, got {side}")
    img = Image.new("L", (side, side), color=255)
    draw = ImageDraw.Draw(img)
    margin = 0.05 * side
    scale = (side - 2 * margin - 1) / 2.0
    for stroke in _stroke_arrays(seq):
        px = (stroke + 1.0) * scale + margin
        if px.shape[0] == 1:
            draw.point([tuple(px[0])], fill=0)
        else:
            draw.line([tuple(p) for p in px], fill=0, width=1)
    return np.asarray(img, dtype=np.uint8)
