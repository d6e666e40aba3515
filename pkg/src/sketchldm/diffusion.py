"""Denoising diffusion core: schedule, forward process, loss, and samplers.

All operations work on latent tensors of shape (batch, length, channels) and
take the denoiser as an opaque callable eps_hat = model(z_t, t, cond), so the
module stays independent of any particular backbone.  Schedule arrays are kept
in float64 and indexed 0..T, where index 0 is a sentinel (beta_0 = 0,
alpha_bar_0 = 1) so that t always means "diffusion step t in [1, T]".
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigurationError, NumericalError


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed linear-beta schedule; every array has length T + 1."""

    T: int
    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor
    posterior_variance: torch.Tensor

    def coeff(self, name: str, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        """Gather a schedule array at integer steps t and shape it to broadcast
        against a (batch, length, channels) tensor."""
        arr = getattr(self, name)
        vals = arr[t].to(like.dtype)
        return vals.view(-1, *([1] * (like.dim() - 1)))


def make_schedule(T: int = 1000, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule with derived alpha products and posterior variance."""
    if T < 1:
        raise ConfigurationError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")
    betas = torch.zeros(T + 1, dtype=torch.float64)
    betas[1:] = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alphas = 1.0 - betas
    alpha_bars = torch.cumprod(alphas, dim=0)
    # beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t, with index 0 unused
    posterior_variance = torch.zeros(T + 1, dtype=torch.float64)
    posterior_variance[1:] = (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:]) * betas[1:]
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars,
                         posterior_variance=posterior_variance)


def _check_t(t: torch.Tensor, T: int) -> None:
    if t.numel() == 0 or int(t.min()) < 1 or int(t.max()) > T:
        raise ConfigurationError(f"timesteps must lie in [1, {T}]")


def q_sample(z0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
             schedule: NoiseSchedule) -> torch.Tensor:
    """Forward diffusion: z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps."""
    if z0.shape != eps.shape:
        raise ConfigurationError(f"shape mismatch: {tuple(z0.shape)} vs {tuple(eps.shape)}")
    _check_t(t, schedule.T)
    abar = schedule.coeff("alpha_bars", t, z0)
    return abar.sqrt() * z0 + (1.0 - abar).sqrt() * eps


def diffusion_loss(model, z0: torch.Tensor, cond, schedule: NoiseSchedule,
                   generator: torch.Generator) -> torch.Tensor:
    """Noise-prediction objective: mean squared error between eps and the
    model's estimate at a uniformly drawn timestep per sample."""
    b = z0.shape[0]
    t = torch.randint(1, schedule.T + 1, (b,), generator=generator)
    eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    z_t = q_sample(z0, t, eps, schedule)
    eps_hat = model(z_t, t, cond)
    loss = torch.mean((eps - eps_hat) ** 2)
    if not torch.isfinite(loss):
        raise NumericalError("diffusion loss is not finite")
    return loss


def p_sample_step(model, z_t: torch.Tensor, t: torch.Tensor, cond,
                  schedule: NoiseSchedule, generator: torch.Generator) -> torch.Tensor:
    """One ancestral reverse step from z_t to z_{t-1}.

    mu = (z_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t), plus
    posterior noise sigma_t = sqrt(beta_tilde_t) for t > 1; the final step
    (t = 1) is deterministic.
    """
    _check_t(t, schedule.T)
    eps_hat = model(z_t, t, cond)
    beta = schedule.coeff("betas", t, z_t)
    alpha = schedule.coeff("alphas", t, z_t)
    abar = schedule.coeff("alpha_bars", t, z_t)
    mean = (z_t - beta / (1.0 - abar).sqrt() * eps_hat) / alpha.sqrt()
    var = schedule.coeff("posterior_variance", t, z_t)
    nonfinal = (t > 1).to(z_t.dtype).view(-1, *([1] * (z_t.dim() - 1)))
    noise = torch.randn(z_t.shape, generator=generator, dtype=z_t.dtype)
    return mean + nonfinal * var.sqrt() * noise


def ddim_sample(model, shape: tuple[int, ...], cond, schedule: NoiseSchedule,
                generator: torch.Generator, substeps: int,
                eta: float = 0.0) -> torch.Tensor:
    """Generalized (non-Markovian) sampler over an evenly spaced subsequence of
    timesteps; eta = 0 is deterministic given z_T, eta = 1 matches ancestral
    noise levels."""
    if not (1 <= substeps <= schedule.T):
        raise ConfigurationError(f"substeps must lie in [1, {schedule.T}]")
    taus = torch.linspace(1, schedule.T, substeps).round().to(torch.long)
    taus = torch.unique(taus, sorted=True)
    z = torch.randn(shape, generator=generator)
    abars = schedule.alpha_bars
    for i in range(len(taus) - 1, -1, -1):
        t = taus[i]
        t_batch = torch.full((shape[0],), int(t), dtype=torch.long)
        eps_hat = model(z, t_batch, cond)
        abar_t = float(abars[t])
        abar_prev = float(abars[taus[i - 1]]) if i > 0 else 1.0
        z0_hat = (z - (1.0 - abar_t) ** 0.5 * eps_hat) / abar_t ** 0.5
        sigma = eta * (((1.0 - abar_prev) / (1.0 - abar_t)) ** 0.5
                       * (1.0 - abar_t / abar_prev) ** 0.5)
        dir_coeff = max(1.0 - abar_prev - sigma ** 2, 0.0) ** 0.5
        z = abar_prev ** 0.5 * z0_hat + dir_coeff * eps_hat
        if sigma > 0 and i > 0:
            z = z + sigma * torch.randn(shape, generator=generator)
    return z


def sample_loop(model, shape: tuple[int, ...], cond, schedule: NoiseSchedule,
                generator: torch.Generator, steps: int | None = None) -> torch.Tensor:
    """Generate a latent from pure noise.

    With steps omitted (or equal to T) this is the full ancestral chain;
    fewer steps delegate to the subsequence sampler at ancestral noise level.
    """
    if steps is None:
        steps = schedule.T
    if not (1 <= steps <= schedule.T):
        raise ConfigurationError(f"steps must lie in [1, {schedule.T}]")
    if steps < schedule.T:
        return ddim_sample(model, shape, cond, schedule, generator,
                           substeps=steps, eta=1.0)
    z = torch.randn(shape, generator=generator)
    for step in range(schedule.T, 0, -1):
        t = torch.full((shape[0],), step, dtype=torch.long)
        z = p_sample_step(model, z, t, cond, schedule, generator)
    return z
