"""Quick, Draw! ndjson ingestion.

Each input line is a JSON object with a "word" category and a "drawing" field
holding a list of strokes, each stroke a pair [xs, ys] of coordinate lists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InvalidInputError
from .preprocess import fit_length, normalize, simplify_rdp, strokes_to_points
from .types import DatasetRecord, SketchSequence


@dataclass
class IngestionReport:
    """Bookkeeping for one load_quickdraw call."""

    files_read: int = 0
    lines_seen: int = 0
    records_kept: int = 0
    skipped_malformed: int = 0
    skipped_other_category: int = 0
    kept_per_category: dict[str, int] = field(default_factory=dict)

    def summary(self) -> str:
        per_cat = ", ".join(f"{k}: {v}" for k, v in sorted(self.kept_per_category.items()))
        return (f"{self.records_kept}/{self.lines_seen} lines kept from {self.files_read} files "
                f"({self.skipped_malformed} malformed, "
                f"{self.skipped_other_category} other-category); {per_cat}")


def _drawing_to_strokes(drawing: list) -> list[np.ndarray]:
    """Convert the raw [[xs, ys], ...] drawing payload to (K, 2) float arrays."""
    strokes = []
    for stroke in drawing:
        if not isinstance(stroke, (list, tuple)) or len(stroke) < 2:
            raise InvalidInputError("stroke must be an [xs, ys] pair")
        xs, ys = stroke[0], stroke[1]
        if len(xs) != len(ys) or len(xs) < 1:
            raise InvalidInputError("stroke coordinate lists must be equal-length and non-empty")
        strokes.append(np.stack([np.asarray(xs, dtype=np.float64),
                                 np.asarray(ys, dtype=np.float64)], axis=1))
    if not strokes:
        raise InvalidInputError("drawing has no strokes")
    return strokes


def preprocess_drawing(drawing: list, n_points: int, epsilon: float = 0.01) -> SketchSequence:
    """Full pipeline from a raw drawing payload to a fixed-length SketchSequence.

    `epsilon` is the simplification tolerance in normalized [-1, 1] units; it
    is rescaled to source coordinates before simplification so the two
    operations commute (simplification runs first, on unquantized geometry).
    """
    strokes = _drawing_to_strokes(drawing)
    all_xy = np.vstack(strokes)
    extent = float((all_xy.max(axis=0) - all_xy.min(axis=0)).max())
    eps_src = epsilon * extent / 2.0
    if eps_src > 0.0:
        strokes = [simplify_rdp(s, eps_src) if s.shape[0] >= 2 else s for s in strokes]
    points = strokes_to_points(strokes)
    points = normalize(points)
    return fit_length(points, n_points)


def load_quickdraw(paths: list[str | Path] | str | Path, categories: list[str],
                   n_points: int, epsilon: float = 0.01,
                   per_category_limit: int | None = None) -> tuple[list[DatasetRecord], IngestionReport]:
    """Load ndjson files into fixed-length records for the requested categories.

    Category ids follow the sorted order of `categories`.  Malformed lines are
    skipped and counted; lines whose category is not requested are counted
    separately.  Raises InvalidInputError if any requested category ends up
    with zero records.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    if not categories:
        raise InvalidInputError("at least one category is required")
    cat_ids = {name: i for i, name in enumerate(sorted(set(categories)))}
    report = IngestionReport(kept_per_category={name: 0 for name in cat_ids})
    records: list[DatasetRecord] = []
    for path in paths:
        path = Path(path)
        if not path.is_file():
            raise InvalidInputError(f"not a file: {path}")
        report.files_read += 1
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                report.lines_seen += 1
                try:
                    obj = json.loads(line)
                    word = obj["word"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    report.skipped_malformed += 1
                    continue
                if word not in cat_ids:
                    report.skipped_other_category += 1
                    continue
                if (per_category_limit is not None
                        and report.kept_per_category[word] >= per_category_limit):
                    continue
                try:
                    seq = preprocess_drawing(obj["drawing"], n_points, epsilon)
                except (InvalidInputError, KeyError, TypeError, ValueError):
                    report.skipped_malformed += 1
                    continue
                cid = cat_ids[word]
                seq.category_id = cid
                records.append(DatasetRecord(sketch=seq, category_id=cid))
                report.records_kept += 1
                report.kept_per_category[word] += 1
    empty = [name for name, n in report.kept_per_category.items() if n == 0]
    if empty:
        raise InvalidInputError(f"no records loaded for categories: {empty}")
    return records, report
