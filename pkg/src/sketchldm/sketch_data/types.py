"""Core sketch types: stroke-3 point sequences with a fixed length and pad convention."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError

# Pad point: canvas center with the pen lifted, so pads never add strokes.
PAD_POINT = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class PenPoint:
    """A single stroke-3 point: normalized position plus binary pen state (1 = pen lift)."""

    x: float
    y: float
    pen_state: int

    def __post_init__(self) -> None:
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise InvalidInputError(f"non-finite point ({self.x}, {self.y})")
        if self.pen_state not in (0, 1):
            raise InvalidInputError(f"pen_state must be 0 or 1, got {self.pen_state}")


@dataclass
class SketchSequence:
    """Fixed-length point sequence.

    `points` is an (N, 3) float32 array with columns (x, y, pen_state).
    Indices >= `realized_length` hold the pad point (0, 0, 1); the last real
    point always ends a stroke (pen_state 1).
    """

    points: np.ndarray
    realized_length: int
    category_id: int | None = None

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])

    def point(self, i: int) -> PenPoint:
        x, y, p = self.points[i]
        return PenPoint(float(x), float(y), int(round(float(p))))

    def real_points(self) -> np.ndarray:
        """The (realized_length, 3) slice of actual sketch content."""
        return self.points[: self.realized_length]

    def validate(self) -> None:
        """Raise InvalidInputError if any sequence invariant is violated."""
        pts = self.points
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidInputError(f"points must be (N, 3), got {pts.shape}")
        n = self.realized_length
        if not 1 <= n <= pts.shape[0]:
            raise InvalidInputError(f"realized_length {n} out of range [1, {pts.shape[0]}]")
        if not np.isfinite(pts).all():
            raise InvalidInputError("points contain non-finite values")
        pens = pts[:, 2]
        if not np.isin(pens, (0.0, 1.0)).all():
            raise InvalidInputError("pen states must be exactly 0 or 1")
        if pens[n - 1] != 1.0:
            raise InvalidInputError("last real point must end a stroke (pen_state 1)")
        pad = pts[n:]
        if pad.size and not (
            (pad[:, 0] == 0.0).all() and (pad[:, 1] == 0.0).all() and (pad[:, 2] == 1.0).all()
        ):
            raise InvalidInputError("tail points must equal the pad point (0, 0, 1)")
        xy = pts[:n, :2]
        if xy.size and (np.abs(xy) > 1.0 + 1e-6).any():
            raise InvalidInputError("real points must lie in [-1, 1] after normalization")


@dataclass
class StrokeDecomposition:
    """Partition of the realized points into strokes.

    Each entry of `strokes` is a half-open index range [start, end) whose last
    point carries pen_state 1 and which contains no earlier pen lift.
    """

    strokes: list[tuple[int, int]] = field(default_factory=list)

    @property
    def stroke_count(self) -> int:
        return len(self.strokes)


@dataclass
class DatasetRecord:
    """A preprocessed sketch plus its category and (for paired datasets) photo key."""

    sketch: SketchSequence
    category_id: int
    photo_id: int | None = None
