"""Condition encoders: class table, point-length state embeddings, stroke-count
frequency token, photo-context adapters, and LoRA fine-tuning wrappers."""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
import torch
import torch.nn as nn

from .errors import AdapterUnavailableError, ConfigurationError, InvalidInputError

CONTEXT_LENGTH = 12
DEFAULT_STROKE_MAX = 32
FREQ_FEATURE_WIDTH = 256


def sinusoidal_features(values: torch.Tensor, width: int,
                        max_period: float = 10000.0) -> torch.Tensor:
    """Classic frequency features: half sines, half cosines.

    values holds nonnegative scalars (timesteps or counts), shape (B,).
    At value 0 every sine component is 0 and every cosine component is 1.
    """
    if width % 2 != 0:
        raise ConfigurationError(f"feature width must be even, got {width}")
    half = width // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = values.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ClassEmbedder(nn.Module):
    """Learned category table; the looked-up vector is summed with the
    timestep embedding to form the conditioning vector."""

    def __init__(self, num_classes: int, width: int):
        super().__init__()
        if num_classes < 1:
            raise ConfigurationError(f"num_classes must be >= 1, got {num_classes}")
        self.num_classes = num_classes
        self.table = nn.Embedding(num_classes, width)

    def forward(self, class_id: torch.Tensor) -> torch.Tensor:
        if int(class_id.min()) < 0 or int(class_id.max()) >= self.num_classes:
            raise InvalidInputError(
                f"class_id out of range [0, {self.num_classes})")
        return self.table(class_id)


def build_state_sequence(point_count: torch.Tensor, latent_len: int,
                         ratio: int) -> torch.Tensor:
    """Per-token state flags: token i is a sketch token iff i < ceil(n / r).

    point_count is a (B,) integer tensor of requested point counts; returns a
    (B, latent_len) bool mask, True where the token covers sketch points.
    """
    n_max = latent_len * ratio
    if int(point_count.min()) < 1 or int(point_count.max()) > n_max:
        raise InvalidInputError(f"point_count out of range [1, {n_max}]")
    sketch_tokens = torch.div(point_count + ratio - 1, ratio, rounding_mode="floor")
    idx = torch.arange(latent_len)
    return idx[None, :] < sketch_tokens[:, None]


class StateEmbeddings(nn.Module):
    """Exactly two learned vectors marking sketch-point vs padding tokens."""

    def __init__(self, width: int):
        super().__init__()
        self.sketch_state = nn.Parameter(torch.randn(width) * 0.02)
        self.pad_state = nn.Parameter(torch.randn(width) * 0.02)

    def forward(self, point_count: torch.Tensor, latent_len: int,
                ratio: int) -> torch.Tensor:
        mask = build_state_sequence(point_count, latent_len, ratio)
        return torch.where(mask[:, :, None], self.sketch_state, self.pad_state)


class StrokeCountEmbedder(nn.Module):
    """Stroke-count token: frequency features through a 2-layer perceptron."""

    def __init__(self, width: int, stroke_max: int = DEFAULT_STROKE_MAX,
                 feature_width: int = FREQ_FEATURE_WIDTH):
        super().__init__()
        if stroke_max < 1:
            raise ConfigurationError(f"stroke_max must be >= 1, got {stroke_max}")
        self.stroke_max = stroke_max
        self.feature_width = feature_width
        self.mlp = nn.Sequential(
            nn.Linear(feature_width, width), nn.SiLU(), nn.Linear(width, width))

    def forward(self, stroke_count: torch.Tensor) -> torch.Tensor:
        if int(stroke_count.min()) < 1 or int(stroke_count.max()) > self.stroke_max:
            raise InvalidInputError(
                f"stroke_count out of range [1, {self.stroke_max}]")
        return self.mlp(sinusoidal_features(stroke_count, self.feature_width))


# ---------------------------------------------------------------------------
# photo context


@runtime_checkable
class PhotoEncoderAdapter(Protocol):
    """Image -> deterministic sequence of exactly 12 context vectors."""

    context_width: int

    def encode(self, image_path: str | Path) -> torch.Tensor: ...


class FixtureEncoder:
    """Hermetic stand-in adapter deriving context vectors from a hash of the
    image bytes: bit-exact across platforms, no external weights."""

    def __init__(self, context_width: int = 64):
        self.context_width = context_width

    def encode_bytes(self, data: bytes) -> torch.Tensor:
        digest = hashlib.blake2b(data, digest_size=8).digest()
        seed = int.from_bytes(digest, "little")
        rng = np.random.Generator(np.random.PCG64(seed))
        ctx = rng.standard_normal((CONTEXT_LENGTH, self.context_width))
        return torch.from_numpy(ctx.astype(np.float32))

    def encode(self, image_path: str | Path) -> torch.Tensor:
        return self.encode_bytes(Path(image_path).read_bytes())


def load_clip_adapter(context_width: int = 768):
    """Adapter over a pretrained 12-layer image transformer, taking the
    classification token from every self-attention layer.  Requires optional
    heavyweight dependencies that this package does not ship."""
    raise AdapterUnavailableError(
        "no pretrained image encoder is available in this environment; "
        "use FixtureEncoder for a hermetic photo-conditioning path")


def build_context_cache(photos: dict[int, Path],
                        adapter: PhotoEncoderAdapter) -> dict[int, torch.Tensor]:
    """Encode every photo in the store once, keyed by photo_id."""
    cache = {}
    for pid, path in sorted(photos.items()):
        ctx = adapter.encode(path)
        if ctx.shape != (CONTEXT_LENGTH, adapter.context_width):
            raise ConfigurationError(
                f"adapter returned {tuple(ctx.shape)}, expected "
                f"({CONTEXT_LENGTH}, {adapter.context_width})")
        cache[pid] = ctx
    return cache


def save_context_cache(path: str | Path, cache: dict[int, torch.Tensor],
                       context_width: int) -> Path:
    payload = {
        "version": 1,
        "kind": "photo_context",
        "context_width": context_width,
        "contexts": {int(k): v for k, v in cache.items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_context_cache(path: str | Path) -> tuple[dict[int, torch.Tensor], int]:
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"context cache not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("kind") != "photo_context":
        raise InvalidInputError(f"{path}: not a photo context cache")
    return payload["contexts"], payload["context_width"]


# ---------------------------------------------------------------------------
# LoRA


@dataclass
class LoraSpec:
    rank: int = 8
    alpha: float = 16.0
    targets: tuple[str, ...] = ("q_proj", "k_proj", "v_proj", "out_proj")

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigurationError(f"rank must be >= 1, got {self.rank}")


class LoraLinear(nn.Module):
    """W x + b plus the low-rank update (alpha / rank) * B A x, B zero-init."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.lora_a = nn.Parameter(torch.randn(rank, base.in_features) * 0.02)
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scale * (x @ self.lora_a.t() @ self.lora_b.t())

    def merged_linear(self) -> nn.Linear:
        merged = nn.Linear(self.base.in_features, self.base.out_features,
                           bias=self.base.bias is not None)
        with torch.no_grad():
            merged.weight.copy_(self.base.weight + self.scale * (self.lora_b @ self.lora_a))
            if self.base.bias is not None:
                merged.bias.copy_(self.base.bias)
        return merged


def _iter_target_parents(model: nn.Module, targets: tuple[str, ...]):
    for name, module in model.named_modules():
        for attr in targets:
            child = getattr(module, attr, None)
            if isinstance(child, (nn.Linear, LoraLinear)):
                yield module, attr, child, f"{name}.{attr}" if name else attr


def apply_lora(model: nn.Module, spec: LoraSpec) -> list[str]:
    """Wrap every target Linear in the model with a LoRA adapter, in place.

    Returns the qualified names of adapted matrices; errors if none matched.
    """
    adapted = []
    for parent, attr, child, qualname in list(_iter_target_parents(model, spec.targets)):
        if isinstance(child, LoraLinear):
            raise ConfigurationError(f"{qualname} already has a LoRA adapter")
        setattr(parent, attr, LoraLinear(child, spec.rank, spec.alpha))
        adapted.append(qualname)
    if not adapted:
        raise ConfigurationError(
            f"no target matrices named {spec.targets} found in the model")
    return adapted


def lora_parameters(model: nn.Module):
    """The trainable low-rank parameters of an adapted model."""
    for module in model.modules():
        if isinstance(module, LoraLinear):
            yield module.lora_a
            yield module.lora_b


def merge_lora(model: nn.Module) -> nn.Module:
    """Fold every LoRA update into plain Linear weights on a deep copy."""
    merged = copy.deepcopy(model)
    found = False
    for parent in merged.modules():
        for attr, child in list(vars(parent).get("_modules", {}).items()):
            if isinstance(child, LoraLinear):
                setattr(parent, attr, child.merged_linear())
                found = True
    if not found:
        raise ConfigurationError("model has no LoRA adapters to merge")
    return merged
