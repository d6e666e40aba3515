"""Structured run configuration: a YAML document validated up front, embedded
verbatim into every checkpoint the run produces.

Schema (all keys optional, defaults shown):

    seed: 0
    out_dir: runs/run0
    device: cpu            # env SKETCHLDM_DEVICE overrides
    data:
      cache: null          # prepared record cache (env SKETCHLDM_CACHE)
      manifest: null       # photo-sketch pairs (env SKETCHLDM_MANIFEST)
      context_cache: null  # photo contexts (env SKETCHLDM_CONTEXT_CACHE)
      categories: []
      n_points: 96
      ratio: 4
      epsilon: 0.01
    vae:
      width: 128
      depth_per_stage: 2
      head_count: 4
      kl_weight: 1.0e-6
      pad_l1_weight: 1.0   # L1 pull of reconstructed pad rows toward (0, 0)
    ldm:
      width: 192
      depth: 6
      head_count: 6
      stroke_mode: token   # token | adaln | cross_attn
      stroke_max: 32
      use_class: true
      use_points: true
      use_strokes: true
    schedule:
      T: 1000
      beta_start: 1.0e-4
      beta_end: 0.02
    train:
      steps: 1000
      batch_size: 64
      lr: 1.0e-4
      log_every: 50
      total_steps: null
    lora:
      rank: 8
      alpha: 16.0

Environment variables override only paths and device selection, never
hyperparameters.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import torch
import yaml

from .backbone import STROKE_MODES
from .errors import ConfigurationError


@dataclass
class DataSection:
    cache: str | None = None
    manifest: str | None = None
    context_cache: str | None = None
    categories: list[str] = field(default_factory=list)
    n_points: int = 96
    ratio: int = 4
    epsilon: float = 0.01


@dataclass
class VaeSection:
    width: int = 128
    depth_per_stage: int = 2
    head_count: int = 4
    kl_weight: float = 1e-6
    pad_l1_weight: float = 1.0


@dataclass
class LdmSection:
    width: int = 192
    depth: int = 6
    head_count: int = 6
    stroke_mode: str = "token"
    stroke_max: int = 32
    use_class: bool = True
    use_points: bool = True
    use_strokes: bool = True


@dataclass
class ScheduleSection:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class TrainSection:
    steps: int = 1000
    batch_size: int = 64
    lr: float = 1e-4
    log_every: int = 50
    total_steps: int | None = None


@dataclass
class LoraSection:
    rank: int = 8
    alpha: float = 16.0


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/run0"
    device: str = "cpu"
    data: DataSection = field(default_factory=DataSection)
    vae: VaeSection = field(default_factory=VaeSection)
    ldm: LdmSection = field(default_factory=LdmSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    train: TrainSection = field(default_factory=TrainSection)
    lora: LoraSection = field(default_factory=LoraSection)

    def validate(self) -> None:
        d, v, l, s, t = self.data, self.vae, self.ldm, self.schedule, self.train
        if d.n_points < 1 or d.ratio < 1 or d.n_points % d.ratio != 0:
            raise ConfigurationError(
                f"data.n_points ({d.n_points}) must be a positive multiple of "
                f"data.ratio ({d.ratio})")
        if d.epsilon < 0:
            raise ConfigurationError("data.epsilon must be >= 0")
        if v.width < 1 or v.depth_per_stage < 1 or v.head_count < 1:
            raise ConfigurationError("vae sizes must be positive")
        if v.width % v.head_count != 0:
            raise ConfigurationError("vae.width must be divisible by vae.head_count")
        if v.kl_weight < 0:
            raise ConfigurationError("vae.kl_weight must be >= 0")
        if v.pad_l1_weight < 0:
            raise ConfigurationError("vae.pad_l1_weight must be >= 0")
        if l.width % l.head_count != 0 or l.depth < 1:
            raise ConfigurationError(
                "ldm.width must be divisible by ldm.head_count, depth >= 1")
        if l.stroke_mode not in STROKE_MODES:
            raise ConfigurationError(
                f"ldm.stroke_mode must be one of {STROKE_MODES}")
        if l.stroke_max < 1:
            raise ConfigurationError("ldm.stroke_max must be >= 1")
        if s.T < 1:
            raise ConfigurationError("schedule.T must be >= 1")
        if not 0 < s.beta_start <= s.beta_end < 1:
            raise ConfigurationError(
                "schedule needs 0 < beta_start <= beta_end < 1")
        if t.steps < 0:
            raise ConfigurationError("train.steps must be >= 0")
        if t.batch_size < 1:
            raise ConfigurationError("train.batch_size must be >= 1")
        if t.lr <= 0:
            raise ConfigurationError("train.lr must be > 0")
        if t.log_every < 1:
            raise ConfigurationError("train.log_every must be >= 1")
        if t.total_steps is not None and t.total_steps < t.steps:
            raise ConfigurationError("train.total_steps must be >= train.steps")
        if self.lora.rank < 1:
            raise ConfigurationError("lora.rank must be >= 1")
        if self.device != "cpu":
            if not self.device.startswith("cuda"):
                raise ConfigurationError(
                    f"device must be cpu or cuda[:idx], got {self.device!r}")
            if not torch.cuda.is_available():
                raise ConfigurationError(
                    f"device {self.device!r} requested but no accelerator is "
                    f"available")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


_SECTIONS = {
    "data": DataSection, "vae": VaeSection, "ldm": LdmSection,
    "schedule": ScheduleSection, "train": TrainSection, "lora": LoraSection,
}


def _build_section(cls, mapping: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(mapping) - known
    if unknown:
        raise ConfigurationError(
            f"unknown {where} field(s): {', '.join(sorted(unknown))}")
    return cls(**mapping)


def run_config_from_mapping(mapping: dict) -> RunConfig:
    """Build and validate a RunConfig from a parsed document."""
    if not isinstance(mapping, dict):
        raise ConfigurationError("run config must be a mapping at top level")
    mapping = dict(mapping)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = mapping.pop(name, None)
        if section is None:
            section = {}
        if not isinstance(section, dict):
            raise ConfigurationError(f"section {name!r} must be a mapping")
        kwargs[name] = _build_section(cls, section, f"{name}.")
    top_known = {"seed", "out_dir", "device"}
    unknown = set(mapping) - top_known
    if unknown:
        raise ConfigurationError(
            f"unknown top-level field(s): {', '.join(sorted(unknown))}")
    try:
        cfg = RunConfig(**mapping, **kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad run config: {exc}") from exc
    _apply_env_overrides(cfg)
    cfg.validate()
    return cfg


def _apply_env_overrides(cfg: RunConfig) -> None:
    # paths and device only; hyperparameters never come from the environment
    out_dir = os.environ.get("SKETCHLDM_OUT_DIR")
    if out_dir:
        cfg.out_dir = out_dir
    cache = os.environ.get("SKETCHLDM_CACHE")
    if cache:
        cfg.data.cache = cache
    manifest = os.environ.get("SKETCHLDM_MANIFEST")
    if manifest:
        cfg.data.manifest = manifest
    context_cache = os.environ.get("SKETCHLDM_CONTEXT_CACHE")
    if context_cache:
        cfg.data.context_cache = context_cache
    device = os.environ.get("SKETCHLDM_DEVICE")
    if device:
        cfg.device = device


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        document = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML: {exc}") from exc
    if document is None:
        document = {}
    return run_config_from_mapping(document)
