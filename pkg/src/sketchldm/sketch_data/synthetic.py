"""Deterministic synthetic sketch corpus in the ndjson ingestion format.

Generated drawings have exactly controlled point and stroke counts that
survive the preprocessing pipeline: every point carries an alternating
perpendicular offset large enough that simplification (at the default
tolerance) can never remove it, so `realized_length` after ingestion equals
the generated point count.  Two visual styles keep categories separable:
even category indices draw a star polygon, odd ones a serpentine grid.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from ..errors import InvalidInputError

# Source canvas is ~1000 units wide, so the default normalized simplification
# tolerance 0.01 maps to ~5 source units.  Offsets of 18..24 units with point
# spacing >= 26 keep every point's chord deviation above that with margin.
_CANVAS = 1000.0
_MIN_POINTS = 8
_MAX_POINTS = 96
_MAX_STROKES = 8


def _star_points(k: int, rng: np.random.Generator) -> np.ndarray:
    # Star polygon with strongly separated radii: the inner/outer contrast
    # (>= 120 units at any k) dwarfs both the chord sagitta and the
    # simplification tolerance, so no vertex can fall near a chord.
    r_out = rng.uniform(440.0, 480.0)
    r_in = rng.uniform(150.0, 190.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    cx = _CANVAS / 2 + rng.uniform(-30.0, 30.0)
    cy = _CANVAS / 2 + rng.uniform(-30.0, 30.0)
    angles = phase + 2.0 * np.pi * np.arange(k) / k
    r = np.where(np.arange(k) % 2 == 0, r_out, r_in)
    return np.stack([cx + r * np.cos(angles), cy + r * np.sin(angles)], axis=1)


def _grid_points(k: int, rng: np.random.Generator) -> np.ndarray:
    cols = max(2, int(np.ceil(np.sqrt(k))))
    rows = max(1, int(np.ceil(k / cols)))
    width = rng.uniform(850.0, 980.0)
    height = width if rows > 1 else 0.0
    xs0 = np.linspace(0.0, width, cols)
    ys0 = np.linspace(0.0, height, rows) if rows > 1 else np.array([_CANVAS / 2])
    amp = rng.uniform(18.0, 24.0)
    pts = np.empty((k, 2))
    for i in range(k):
        row, col = divmod(i, cols)
        if row % 2 == 1:
            col = cols - 1 - col
        # Boustrophedon rows are horizontal, so the alternating offset is vertical.
        sign = 1.0 if i % 2 == 0 else -1.0
        pts[i, 0] = xs0[col]
        pts[i, 1] = ys0[row] + sign * amp * rng.uniform(0.85, 1.0)
    pts[:, 0] += (_CANVAS - width) / 2
    if rows > 1:
        pts[:, 1] += (_CANVAS - height) / 2
    return pts


def _sample_drawing(style: int, rng: np.random.Generator) -> tuple[list, int, int]:
    """Return (drawing payload, point count, stroke count) for one sample."""
    k = int(rng.integers(_MIN_POINTS, _MAX_POINTS + 1))
    s = int(rng.integers(1, min(_MAX_STROKES, k // 2) + 1))
    sizes = 2 + rng.multinomial(k - 2 * s, np.full(s, 1.0 / s))
    pts = _star_points(k, rng) if style == 0 else _grid_points(k, rng)
    pts = np.rint(pts).astype(int)
    drawing = []
    start = 0
    for size in sizes:
        chunk = pts[start : start + size]
        drawing.append([chunk[:, 0].tolist(), chunk[:, 1].tolist()])
        start += size
    return drawing, k, s


def write_synthetic_quickdraw(path: str | Path, categories: list[str],
                              per_category: int, seed: int) -> Path:
    """Write an ndjson corpus with `per_category` drawings for each category.

    The same (path-independent) arguments always produce byte-identical
    output.  Category order determines the visual style assignment.
    """
    if not categories:
        raise InvalidInputError("at least one category name is required")
    if per_category < 1:
        raise InvalidInputError(f"per_category must be >= 1, got {per_category}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    with path.open("w", encoding="utf-8") as fh:
        for ci, cat in enumerate(categories):
            for j in range(per_category):
                drawing, k, s = _sample_drawing(ci % 2, rng)
                rec = {
                    "word": cat,
                    "key_id": f"{ci:02d}{j:08d}",
                    "recognized": True,
                    "drawing": drawing,
                }
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    return path


def _photo_image(drawing: list, side: int, shade: int) -> Image.Image:
    """Photo stand-in: the same shape drawn thick on a gray background."""
    img = Image.new("L", (side, side), color=shade)
    draw = ImageDraw.Draw(img)
    all_xy = np.vstack([np.stack([np.asarray(s[0], dtype=float),
                                  np.asarray(s[1], dtype=float)], axis=1) for s in drawing])
    lo, hi = all_xy.min(axis=0), all_xy.max(axis=0)
    extent = max(float((hi - lo).max()), 1.0)
    scale = (side * 0.9 - 1) / extent
    offset = (side - (hi - lo) * scale) / 2.0
    for stroke in drawing:
        xy = np.stack([np.asarray(stroke[0], dtype=float),
                       np.asarray(stroke[1], dtype=float)], axis=1)
        px = (xy - lo) * scale + offset
        if px.shape[0] == 1:
            draw.point([tuple(px[0])], fill=20)
        else:
            draw.line([tuple(p) for p in px], fill=20, width=2)
    return img


def write_photo_sketch_fixture(root: str | Path, n_pairs: int, seed: int,
                               photo_side: int = 64) -> Path:
    """Build a hermetic photo-sketch paired dataset under `root`.

    Layout: photos/p{i}.png, sketches/s{i}.json, and manifest.tsv pairing
    them.  Photos are deterministic renders of the paired shape, so the whole
    fixture is reproducible from (n_pairs, seed).  Returns the manifest path.
    """
    if n_pairs < 1:
        raise InvalidInputError(f"n_pairs must be >= 1, got {n_pairs}")
    root = Path(root)
    (root / "photos").mkdir(parents=True, exist_ok=True)
    (root / "sketches").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n_pairs):
        drawing, k, s = _sample_drawing(i % 2, rng)
        sketch_rel = f"sketches/s{i:04d}.json"
        photo_rel = f"photos/p{i:04d}.png"
        with (root / sketch_rel).open("w", encoding="utf-8") as fh:
            json.dump({"drawing": drawing}, fh, separators=(",", ":"))
        shade = 170 + (i * 7) % 60
        _photo_image(drawing, photo_side, shade).save(root / photo_rel)
        lines.append(f"{photo_rel}\t{sketch_rel}")
    manifest = root / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
