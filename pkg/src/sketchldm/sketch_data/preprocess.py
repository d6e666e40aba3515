"""Preprocessing: polyline simplification, normalization, length fitting, stroke accounting."""

from __future__ import annotations

import warnings

import numpy as np

from ..errors import ConfigurationError, InvalidInputError
from .types import PAD_POINT, SketchSequence, StrokeDecomposition

# Decoded-output pad classification: a point is pad when its pen probability
# exceeds PEN_THRESHOLD and it sits within PAD_POSITION_EPS of the origin.
PAD_POSITION_EPS = 0.05
PEN_THRESHOLD = 0.5


def _segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance of each point to the segment a-b (point distance if a == b)."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def simplify_rdp(polyline: np.ndarray | list, epsilon: float) -> np.ndarray:
    """Ramer-Douglas-Peucker simplification of a (K, 2) polyline.

    Returns a subsequence of the input (endpoints always kept); every removed
    point lies within `epsilon` of the simplified chain.
    """
    pts = np.asarray(polyline, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInputError(f"polyline must be (K, 2), got {pts.shape}")
    if pts.shape[0] < 2:
        raise InvalidInputError("polyline needs at least 2 points")
    if epsilon < 0:
        raise InvalidInputError(f"epsilon must be >= 0, got {epsilon}")

    keep = np.zeros(pts.shape[0], dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, pts.shape[0] - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        interior = pts[lo + 1 : hi]
        dists = _segment_distances(interior, pts[lo], pts[hi])
        idx = int(np.argmax(dists))
        if dists[idx] > epsilon:
            split = lo + 1 + idx
            keep[split] = True
            stack.append((lo, split))
            stack.append((split, hi))
    return pts[keep]


def normalize(points: np.ndarray) -> np.ndarray:
    """Center an (M, 3) stroke-3 point array on its bounding box and scale to [-1, 1].

    Aspect ratio is preserved: the larger bounding-box side maps to [-1, 1].
    Pen states pass through untouched.  A fully degenerate sketch (all points
    coincident) collapses to the origin with a warning.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise InvalidInputError(f"expected (M, 3) points with M >= 1, got {pts.shape}")
    xy = pts[:, :2]
    lo = xy.min(axis=0)
    hi = xy.max(axis=0)
    extent = float((hi - lo).max())
    out = pts.copy()
    if extent <= 0.0:
        warnings.warn("degenerate sketch: all points coincident, placing at origin")
        out[:, :2] = 0.0
        return out
    center = (hi + lo) / 2.0
    out[:, :2] = (xy - center) * (2.0 / extent)
    return out


def fit_length(points: np.ndarray, n_points: int) -> SketchSequence:
    """Pad or truncate an (M, 3) point array to exactly `n_points` points.

    Shorter inputs keep their length as `realized_length` with a pad tail;
    longer inputs are cut to the first `n_points` points with the final
    pen state forced to 1 so the stroke count stays well defined.
    """
    if n_points < 1:
        raise ConfigurationError(f"n_points must be >= 1, got {n_points}")
    pts = np.asarray(points, dtype=np.float32)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise InvalidInputError(f"expected (M, 3) points with M >= 1, got {pts.shape}")
    m = pts.shape[0]
    out = np.empty((n_points, 3), dtype=np.float32)
    if m >= n_points:
        out[:] = pts[:n_points]
        realized = n_points
    else:
        out[:m] = pts
        out[m:] = np.asarray(PAD_POINT, dtype=np.float32)
        realized = m
    out[realized - 1, 2] = 1.0
    return SketchSequence(points=out, realized_length=realized)


def count_strokes(seq: SketchSequence) -> StrokeDecomposition:
    """Split the realized points into strokes at pen lifts."""
    pens = seq.points[: seq.realized_length, 2]
    strokes: list[tuple[int, int]] = []
    start = 0
    for i, p in enumerate(pens):
        if p == 1.0:
            strokes.append((start, i + 1))
            start = i + 1
    return StrokeDecomposition(strokes=strokes)


def measure_realized_length(decoded: np.ndarray, pad_eps: float = PAD_POSITION_EPS,
                            pen_threshold: float = PEN_THRESHOLD) -> int:
    """Length of the non-pad prefix of a decoded (N, 3) continuous sketch.

    Returns the smallest n such that every point at index >= n classifies as
    pad (pen probability above `pen_threshold` and position within `pad_eps`
    of the origin); N when no pad suffix exists.
    """
    pts = np.asarray(decoded)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidInputError(f"decoded points must be (N, 3), got {pts.shape}")
    is_pad = (pts[:, 2] > pen_threshold) & (np.abs(pts[:, :2]).max(axis=1) < pad_eps)
    n = pts.shape[0]
    while n > 0 and is_pad[n - 1]:
        n -= 1
    return n


def decoded_to_sequence(decoded: np.ndarray, pad_eps: float = PAD_POSITION_EPS) -> SketchSequence:
    """Quantize a decoded continuous sketch into a valid SketchSequence.

    Pen probabilities are thresholded at 0.5, positions clipped to [-1, 1],
    the measured pad suffix replaced by exact pad points, and the final real
    point forced to end a stroke.  An all-pad decode keeps one pad-like point.
    """
    pts = np.asarray(decoded, dtype=np.float32)
    n = measure_realized_length(pts, pad_eps=pad_eps)
    n = max(n, 1)
    out = np.empty_like(pts)
    out[:n, :2] = np.clip(pts[:n, :2], -1.0, 1.0)
    out[:n, 2] = (pts[:n, 2] > PEN_THRESHOLD).astype(np.float32)
    out[n:] = np.asarray(PAD_POINT, dtype=np.float32)
    out[n - 1, 2] = 1.0
    return SketchSequence(points=out, realized_length=n)


def strokes_to_points(strokes: list[np.ndarray]) -> np.ndarray:
    """Concatenate (K_i, 2) stroke arrays into one (M, 3) stroke-3 array.

    The last point of each stroke gets pen_state 1, all others 0.
    """
    if not strokes:
        raise InvalidInputError("sketch has no strokes")
    parts = []
    for stroke in strokes:
        arr = np.asarray(stroke, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
            raise InvalidInputError(f"stroke must be (K, 2) with K >= 1, got {arr.shape}")
        pens = np.zeros((arr.shape[0], 1))
        pens[-1] = 1.0
        parts.append(np.hstack([arr, pens]))
    return np.vstack(parts)
