"""Versioned binary cache for preprocessed datasets.

Layout (all little-endian):
  8 bytes   magic b"SKLCACHE"
  u32       format version (currently 1)
  u64       metadata length in bytes
  ...       canonical JSON metadata (sorted keys, compact separators)
  f32 array xy positions, shape (count, n_points, 2)
  u8 array  pen states, shape (count, n_points)
  u32 array realized lengths, shape (count,)
  u32 array category ids, shape (count,); 0xFFFFFFFF encodes "none"

Writing the same records with the same metadata is byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import InvalidInputError
from .types import DatasetRecord, SketchSequence

_MAGIC = b"SKLCACHE"
_VERSION = 1
_NO_CATEGORY = 0xFFFFFFFF


def save_cache(records: list[DatasetRecord], path: str | Path,
               meta: dict | None = None) -> None:
    """Write preprocessed records to `path` in the documented binary layout."""
    if not records:
        raise InvalidInputError("refusing to cache an empty record list")
    n_points = records[0].sketch.n_points
    if any(r.sketch.n_points != n_points for r in records):
        raise InvalidInputError("all cached records must share one sequence length")
    count = len(records)
    xy = np.empty((count, n_points, 2), dtype="<f4")
    pen = np.empty((count, n_points), dtype=np.uint8)
    realized = np.empty(count, dtype="<u4")
    category = np.empty(count, dtype="<u4")
    for i, rec in enumerate(records):
        xy[i] = rec.sketch.points[:, :2]
        pen[i] = rec.sketch.points[:, 2].astype(np.uint8)
        realized[i] = rec.sketch.realized_length
        category[i] = _NO_CATEGORY if rec.category_id is None else rec.category_id
    header = dict(meta or {})
    header["count"] = count
    header["n_points"] = n_points
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.array(_VERSION, dtype="<u4").tobytes())
        fh.write(np.array(len(blob), dtype="<u8").tobytes())
        fh.write(blob)
        fh.write(xy.tobytes())
        fh.write(pen.tobytes())
        fh.write(realized.tobytes())
        fh.write(category.tobytes())


def load_cache(path: str | Path) -> tuple[list[DatasetRecord], dict]:
    """Read a cache file back into records plus its metadata dict."""
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != _MAGIC:
        raise InvalidInputError(f"{path}: not a sketch cache file")
    version = int(np.frombuffer(data[8:12], dtype="<u4")[0])
    if version != _VERSION:
        raise InvalidInputError(f"{path}: unsupported cache version {version}")
    meta_len = int(np.frombuffer(data[12:20], dtype="<u8")[0])
    off = 20
    meta = json.loads(data[off : off + meta_len].decode("utf-8"))
    off += meta_len
    count, n_points = meta["count"], meta["n_points"]
    xy_bytes = count * n_points * 2 * 4
    pen_bytes = count * n_points
    idx_bytes = count * 4
    expected = off + xy_bytes + pen_bytes + 2 * idx_bytes
    if len(data) != expected:
        raise InvalidInputError(f"{path}: truncated cache "
                                f"(expected {expected} bytes, found {len(data)})")
    xy = np.frombuffer(data, dtype="<f4", count=count * n_points * 2,
                       offset=off).reshape(count, n_points, 2)
    off += xy_bytes
    pen = np.frombuffer(data, dtype=np.uint8, count=count * n_points,
                        offset=off).reshape(count, n_points)
    off += pen_bytes
    realized = np.frombuffer(data, dtype="<u4", count=count, offset=off)
    off += idx_bytes
    category = np.frombuffer(data, dtype="<u4", count=count, offset=off)
    records = []
    for i in range(count):
        pts = np.empty((n_points, 3), dtype=np.float32)
        pts[:, :2] = xy[i]
        pts[:, 2] = pen[i]
        cid = None if category[i] == _NO_CATEGORY else int(category[i])
        seq = SketchSequence(points=pts, realized_length=int(realized[i]), category_id=cid)
        records.append(DatasetRecord(sketch=seq, category_id=cid))
    return records, meta
