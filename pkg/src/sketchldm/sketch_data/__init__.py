"""Sketch data model, preprocessing, ingestion, and rendering."""

from .types import (
    PAD_POINT,
    DatasetRecord,
    PenPoint,
    SketchSequence,
    StrokeDecomposition,
)
from .preprocess import (
    count_strokes,
    decoded_to_sequence,
    fit_length,
    measure_realized_length,
    normalize,
    simplify_rdp,
    strokes_to_points,
)
from .quickdraw import IngestionReport, load_quickdraw, preprocess_drawing
from .paired import load_photo_sketch_pairs
from .render import render_raster, render_svg
from .cache import load_cache, save_cache
from .synthetic import write_photo_sketch_fixture, write_synthetic_quickdraw

__all__ = [
    "PAD_POINT",
    "PenPoint",
    "SketchSequence",
    "StrokeDecomposition",
    "DatasetRecord",
    "simplify_rdp",
    "normalize",
    "fit_length",
    "count_strokes",
    "measure_realized_length",
    "decoded_to_sequence",
    "strokes_to_points",
    "load_quickdraw",
    "preprocess_drawing",
    "IngestionReport",
    "load_photo_sketch_pairs",
    "render_svg",
    "render_raster",
    "save_cache",
    "load_cache",
    "write_synthetic_quickdraw",
    "write_photo_sketch_fixture",
]
