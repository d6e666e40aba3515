"""Photo-sketch paired dataset loading.

The manifest is a plain-text file with one tab-separated pair per line:
photo path, then sketch vector file path, both relative to the manifest's
directory (absolute paths pass through).  Each sketch file holds one JSON
object with a "drawing" array in the stroke format used by ndjson ingestion,
or a bare drawing array.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import InvalidInputError
from .quickdraw import preprocess_drawing
from .types import DatasetRecord


def load_photo_sketch_pairs(manifest: str | Path, n_points: int,
                            epsilon: float = 0.01) -> tuple[list[DatasetRecord], dict[int, Path]]:
    """Load the manifest into records plus a photo store mapping photo_id to file path.

    photo_id is the zero-based pair index in manifest order.  Every photo path
    must resolve to an existing file; a missing photo raises an error that
    names the offending pair.
    """
    manifest = Path(manifest)
    if not manifest.is_file():
        raise InvalidInputError(f"manifest not found: {manifest}")
    base = manifest.parent
    records: list[DatasetRecord] = []
    photos: dict[int, Path] = {}
    with manifest.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise InvalidInputError(
                    f"{manifest}:{lineno}: expected 'photo<TAB>sketch', got {line!r}")
            photo_path = base / parts[0] if not Path(parts[0]).is_absolute() else Path(parts[0])
            sketch_path = base / parts[1] if not Path(parts[1]).is_absolute() else Path(parts[1])
            if not photo_path.is_file():
                raise InvalidInputError(
                    f"{manifest}:{lineno}: photo missing for pair ({parts[0]}, {parts[1]})")
            if not sketch_path.is_file():
                raise InvalidInputError(
                    f"{manifest}:{lineno}: sketch missing for pair ({parts[0]}, {parts[1]})")
            with sketch_path.open("r", encoding="utf-8") as sfh:
                obj = json.load(sfh)
            drawing = obj["drawing"] if isinstance(obj, dict) else obj
            try:
                seq = preprocess_drawing(drawing, n_points, epsilon)
            except (InvalidInputError, KeyError, TypeError, ValueError) as exc:
                raise InvalidInputError(f"{manifest}:{lineno}: bad sketch file "
                                        f"{parts[1]}: {exc}") from exc
            pid = len(records)
            photos[pid] = photo_path
            records.append(DatasetRecord(sketch=seq, category_id=None, photo_id=pid))
    if not records:
        raise InvalidInputError(f"manifest is empty: {manifest}")
    return records, photos
