"""Transformer denoiser with adaLN-Zero conditioning.

Every residual branch is gated by a zero-initialized modulation, and the
output head is zero-initialized, so a freshly constructed model predicts
exactly zero noise and each block is exactly the identity.  Conditioning
enters three ways: a per-sample vector (timestep + class) through adaLN
modulation, per-token state embeddings marking sketch vs pad positions, and
an appended stroke token (or its adaLN / cross-attention ablation variants).
Photo semantics arrive as a 12-vector context through cross-attention layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .conditioning import (
    DEFAULT_STROKE_MAX,
    ClassEmbedder,
    StateEmbeddings,
    StrokeCountEmbedder,
    sinusoidal_features,
)
from .errors import ConfigurationError, InvalidInputError, NumericalError

STROKE_MODES = ("token", "adaln", "cross_attn")


@dataclass
class BackboneConfig:
    latent_length: int = 24
    width: int = 192
    depth: int = 6
    head_count: int = 6
    ratio: int = 4
    num_classes: int = 0
    context_width: int = 64
    stroke_max: int = DEFAULT_STROKE_MAX
    use_class: bool = False
    use_points: bool = False
    use_strokes: bool = False
    use_photo: bool = False
    stroke_mode: str = "token"

    def __post_init__(self):
        if self.width % self.head_count != 0:
            raise ConfigurationError(
                f"width ({self.width}) must be divisible by head_count "
                f"({self.head_count})")
        if self.use_class and self.use_photo:
            raise ConfigurationError("use_class and use_photo are exclusive")
        if self.use_class and self.num_classes < 1:
            raise ConfigurationError("use_class requires num_classes >= 1")
        if self.stroke_mode not in STROKE_MODES:
            raise ConfigurationError(
                f"stroke_mode must be one of {STROKE_MODES}, got {self.stroke_mode}")
        if self.latent_length < 1 or self.depth < 1 or self.ratio < 1:
            raise ConfigurationError("latent_length, depth, ratio must be >= 1")

    @property
    def n_points(self) -> int:
        return self.latent_length * self.ratio


@dataclass
class ConditioningBundle:
    """Carrier for everything the denoiser may be conditioned on.

    t is an optional slot used by callers that bundle the timestep with the
    rest; the model itself always receives t as an explicit argument.
    """

    t: torch.Tensor | None = None
    class_id: torch.Tensor | None = None
    point_count: torch.Tensor | None = None
    stroke_count: torch.Tensor | None = None
    photo_context: torch.Tensor | None = None


EMPTY_BUNDLE = ConditioningBundle()


class TimestepEmbedder(nn.Module):
    def __init__(self, width: int, feature_width: int = 256):
        super().__init__()
        self.feature_width = feature_width
        self.mlp = nn.Sequential(
            nn.Linear(feature_width, width), nn.SiLU(), nn.Linear(width, width))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.mlp(sinusoidal_features(t, self.feature_width))


class AttentionQKV(nn.Module):
    """Multi-head self-attention with separate projection matrices so that
    fine-tuning adapters can target q/k/v/out individually."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q_proj = nn.Linear(width, width)
        self.k_proj = nn.Linear(width, width)
        self.v_proj = nn.Linear(width, width)
        self.out_proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, l, w = x.shape
        q = self.q_proj(x).view(b, l, self.heads, -1).transpose(1, 2)
        k = self.k_proj(x).view(b, l, self.heads, -1).transpose(1, 2)
        v = self.v_proj(x).view(b, l, self.heads, -1).transpose(1, 2)
        attn = F.scaled_dot_product_attention(q, k, v)
        return self.out_proj(attn.transpose(1, 2).reshape(b, l, w))


def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1.0 + scale) + shift


class AdaLnZeroBlock(nn.Module):
    """Pre-norm transformer block whose shift, scale, and residual gates are
    regressed from the conditioning vector by a zero-initialized linear map,
    making the block exactly the identity at initialization."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width, elementwise_affine=False)
        self.attn = AttentionQKV(width, heads)
        self.norm2 = nn.LayerNorm(width, elementwise_affine=False)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width))
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(width, 6 * width))
        nn.init.zeros_(self.modulation[1].weight)
        nn.init.zeros_(self.modulation[1].bias)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        mods = self.modulation(cond)[:, None, :].chunk(6, dim=-1)
        shift1, scale1, gate1, shift2, scale2, gate2 = mods
        x = x + gate1 * self.attn(modulate(self.norm1(x), shift1, scale1))
        return x + gate2 * self.mlp(modulate(self.norm2(x), shift2, scale2))


class CrossAttentionLayer(nn.Module):
    """Residual cross-attention: queries from tokens, keys and values from a
    short context sequence.  The output projection is zero-initialized, so
    the layer is exactly the identity at initialization.  The context gets no
    positional encoding; it is treated as an unordered set."""

    def __init__(self, width: int, context_width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.LayerNorm(width, elementwise_affine=False)
        self.q_proj = nn.Linear(width, width)
        self.k_proj = nn.Linear(context_width, width)
        self.v_proj = nn.Linear(context_width, width)
        self.out_proj = nn.Linear(width, width)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        if context is None:
            raise ConfigurationError("cross-attention called without context")
        b, l, w = x.shape
        m = context.shape[1]
        q = self.q_proj(self.norm(x)).view(b, l, self.heads, -1).transpose(1, 2)
        k = self.k_proj(context).view(b, m, self.heads, -1).transpose(1, 2)
        v = self.v_proj(context).view(b, m, self.heads, -1).transpose(1, 2)
        attn = F.scaled_dot_product_attention(q, k, v)
        return x + self.out_proj(attn.transpose(1, 2).reshape(b, l, w))


class Denoiser(nn.Module):
    """The noise-prediction transformer over latent tokens."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        w = config.width
        token_count = config.latent_length
        if config.use_strokes and config.stroke_mode == "token":
            token_count += 1
        self.token_count = token_count
        self.token_in = nn.Linear(3, w)
        self.pos_emb = nn.Parameter(torch.randn(1, token_count, w) * 0.02)
        self.t_embed = TimestepEmbedder(w)
        if config.use_class:
            self.class_embed = ClassEmbedder(config.num_classes, w)
        if config.use_points:
            self.state_embed = StateEmbeddings(w)
        if config.use_strokes:
            self.stroke_embed = StrokeCountEmbedder(w, config.stroke_max)
            if config.stroke_mode == "cross_attn":
                self.stroke_cross = nn.ModuleList(
                    CrossAttentionLayer(w, w, config.head_count)
                    for _ in range(config.depth))
        self.blocks = nn.ModuleList(
            AdaLnZeroBlock(w, config.head_count) for _ in range(config.depth))
        if config.use_photo:
            self.photo_cross = nn.ModuleList(
                CrossAttentionLayer(w, config.context_width, config.head_count)
                for _ in range(config.depth))
        self.final_norm = nn.LayerNorm(w, elementwise_affine=False)
        self.head = nn.Linear(w, 3)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def _validate_bundle(self, z_t: torch.Tensor, bundle: ConditioningBundle) -> None:
        cfg = self.config
        b = z_t.shape[0]
        if z_t.dim() != 3 or z_t.shape[1] != cfg.latent_length or z_t.shape[2] != 3:
            raise ConfigurationError(
                f"expected (B, {cfg.latent_length}, 3) latents, got {tuple(z_t.shape)}")
        required = {
            "class_id": cfg.use_class,
            "point_count": cfg.use_points,
            "stroke_count": cfg.use_strokes,
            "photo_context": cfg.use_photo,
        }
        for name, needed in required.items():
            value = getattr(bundle, name)
            if needed and value is None:
                raise InvalidInputError(f"model requires {name} but none was given")
            if not needed and value is not None:
                raise InvalidInputError(f"model does not accept {name}")
            if needed and value.shape[0] != b:
                raise InvalidInputError(f"{name} batch size mismatch")
        if cfg.use_photo:
            ctx = bundle.photo_context
            if ctx.dim() != 3 or ctx.shape[1] != 12 or ctx.shape[2] != cfg.context_width:
                raise InvalidInputError(
                    f"photo_context must be (B, 12, {cfg.context_width}), "
                    f"got {tuple(ctx.shape)}")

    def assemble_input(self, z_t: torch.Tensor,
                       bundle: ConditioningBundle) -> torch.Tensor:
        """Latent tokens + positions (+ state embeddings, + stroke token)."""
        cfg = self.config
        self._validate_bundle(z_t, bundle)
        tokens = self.token_in(z_t)
        if cfg.use_points:
            tokens = tokens + self.state_embed(
                bundle.point_count, cfg.latent_length, cfg.ratio)
        if cfg.use_strokes and cfg.stroke_mode == "token":
            stroke = self.stroke_embed(bundle.stroke_count)[:, None, :]
            tokens = torch.cat([tokens, stroke], dim=1)
        return tokens + self.pos_emb

    def forward(self, z_t: torch.Tensor, t: torch.Tensor,
                bundle: ConditioningBundle | None = None) -> torch.Tensor:
        return self.predict_noise(z_t, t, bundle)

    def predict_noise(self, z_t: torch.Tensor, t: torch.Tensor,
                      bundle: ConditioningBundle | None = None) -> torch.Tensor:
        cfg = self.config
        if bundle is None:
            bundle = EMPTY_BUNDLE
        tokens = self.assemble_input(z_t, bundle)
        cond = self.t_embed(t)
        if cfg.use_class:
            cond = cond + self.class_embed(bundle.class_id)
        if cfg.use_strokes and cfg.stroke_mode == "adaln":
            cond = cond + self.stroke_embed(bundle.stroke_count)
        stroke_ctx = None
        if cfg.use_strokes and cfg.stroke_mode == "cross_attn":
            stroke_ctx = self.stroke_embed(bundle.stroke_count)[:, None, :]
        for i, block in enumerate(self.blocks):
            tokens = block(tokens, cond)
            if stroke_ctx is not None:
                tokens = self.stroke_cross[i](tokens, stroke_ctx)
            if cfg.use_photo:
                tokens = self.photo_cross[i](tokens, bundle.photo_context)
            if not torch.isfinite(tokens).all():
                raise NumericalError(f"non-finite activations after block {i}")
        out = self.head(self.final_norm(tokens))
        if cfg.use_strokes and cfg.stroke_mode == "token":
            out = out[:, : cfg.latent_length]
        return out
