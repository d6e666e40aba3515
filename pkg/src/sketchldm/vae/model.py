"""Sequence VAE: transformer blocks around learned linear temporal resampling.

The encoder maps (B, N, 3) stroke-3 sketches to a latent grid (B, N/r, 3)
with a mean head and a log-variance head; the decoder mirrors it.  Temporal
resampling is a learned linear map over non-overlapping windows of r adjacent
tokens, so the compression is exactly r-fold.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigurationError

LATENT_CHANNELS = 3


@dataclass
class VaeConfig:
    n_points: int = 96
    ratio: int = 4
    model_width: int = 128
    depth_per_stage: int = 2
    head_count: int = 4
    kl_weight: float = 1e-6
    pad_l1_weight: float = 1.0

    def __post_init__(self):
        if self.n_points < 1 or self.n_points % self.ratio != 0:
            raise ConfigurationError(
                f"n_points ({self.n_points}) must be a positive multiple of "
                f"ratio ({self.ratio})")
        if self.model_width % self.head_count != 0:
            raise ConfigurationError(
                f"model_width ({self.model_width}) must be divisible by "
                f"head_count ({self.head_count})")
        if self.kl_weight <= 0:
            raise ConfigurationError(f"kl_weight must be > 0, got {self.kl_weight}")
        if self.pad_l1_weight < 0:
            raise ConfigurationError(
                f"pad_l1_weight must be >= 0, got {self.pad_l1_weight}")

    @property
    def latent_length(self) -> int:
        return self.n_points // self.ratio


class SelfAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, l, w = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, l, self.heads, -1).transpose(1, 2)
        k = k.view(b, l, self.heads, -1).transpose(1, 2)
        v = v.view(b, l, self.heads, -1).transpose(1, 2)
        attn = F.scaled_dot_product_attention(q, k, v)
        return self.out(attn.transpose(1, 2).reshape(b, l, w))


class TransformerBlock(nn.Module):
    """Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = SelfAttention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class SketchVae(nn.Module):
    def __init__(self, config: VaeConfig):
        super().__init__()
        self.config = config
        w, r = config.model_width, config.ratio
        n, m = config.n_points, config.latent_length

        self.enc_in = nn.Linear(3, w)
        self.enc_pos_full = nn.Parameter(torch.randn(1, n, w) * 0.02)
        self.enc_blocks_full = nn.ModuleList(
            TransformerBlock(w, config.head_count) for _ in range(config.depth_per_stage))
        self.downsample = nn.Linear(r * w, w)
        self.enc_pos_latent = nn.Parameter(torch.randn(1, m, w) * 0.02)
        self.enc_blocks_latent = nn.ModuleList(
            TransformerBlock(w, config.head_count) for _ in range(config.depth_per_stage))
        self.enc_norm = nn.LayerNorm(w)
        self.mean_head = nn.Linear(w, LATENT_CHANNELS)
        self.logvar_head = nn.Linear(w, LATENT_CHANNELS)

        self.dec_in = nn.Linear(LATENT_CHANNELS, w)
        self.dec_pos_latent = nn.Parameter(torch.randn(1, m, w) * 0.02)
        self.dec_blocks_latent = nn.ModuleList(
            TransformerBlock(w, config.head_count) for _ in range(config.depth_per_stage))
        self.upsample = nn.Linear(w, r * w)
        self.dec_pos_full = nn.Parameter(torch.randn(1, n, w) * 0.02)
        self.dec_blocks_full = nn.ModuleList(
            TransformerBlock(w, config.head_count) for _ in range(config.depth_per_stage))
        self.dec_norm = nn.LayerNorm(w)
        self.dec_head = nn.Linear(w, 3)

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, N, 3) sketch batch -> latent mean and std, each (B, N/r, 3)."""
        cfg = self.config
        if x.dim() != 3 or x.shape[1] != cfg.n_points or x.shape[2] != 3:
            raise ConfigurationError(
                f"expected (B, {cfg.n_points}, 3) input, got {tuple(x.shape)}")
        h = self.enc_in(x) + self.enc_pos_full
        for block in self.enc_blocks_full:
            h = block(h)
        b = h.shape[0]
        h = h.reshape(b, cfg.latent_length, cfg.ratio * cfg.model_width)
        h = self.downsample(h) + self.enc_pos_latent
        for block in self.enc_blocks_latent:
            h = block(h)
        h = self.enc_norm(h)
        mean = self.mean_head(h)
        sigma = torch.exp(0.5 * self.logvar_head(h))
        return mean, sigma

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """(B, N/r, 3) latent -> (B, N, 3) sketch with pen squashed to (0, 1)."""
        cfg = self.config
        if z.dim() != 3 or z.shape[1] != cfg.latent_length or z.shape[2] != LATENT_CHANNELS:
            raise ConfigurationError(
                f"expected (B, {cfg.latent_length}, {LATENT_CHANNELS}) latent, "
                f"got {tuple(z.shape)}")
        h = self.dec_in(z) + self.dec_pos_latent
        for block in self.dec_blocks_latent:
            h = block(h)
        b = h.shape[0]
        h = self.upsample(h).reshape(b, cfg.n_points, cfg.model_width)
        h = h + self.dec_pos_full
        for block in self.dec_blocks_full:
            h = block(h)
        h = self.dec_head(self.dec_norm(h))
        return torch.cat([h[:, :, :2], torch.sigmoid(h[:, :, 2:])], dim=-1)

    @staticmethod
    def reparameterize(mean: torch.Tensor, sigma: torch.Tensor,
                       noise: torch.Tensor) -> torch.Tensor:
        return mean + sigma * noise

    def forward(self, x: torch.Tensor,
                noise: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        mean, sigma = self.encode(x)
        z = self.reparameterize(mean, sigma, noise)
        return self.decode(z), mean, sigma
