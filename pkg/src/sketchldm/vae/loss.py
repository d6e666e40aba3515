"""Composite VAE objective: position MSE + pen-state BCE + weighted KL."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ..errors import NumericalError

PEN_CLAMP_EPS = 1e-7


@dataclass
class VaeLossTerms:
    l_abs: torch.Tensor
    l_state: torch.Tensor
    l_kl: torch.Tensor
    total: torch.Tensor
    l_pad: torch.Tensor | None = None


def vae_loss(target: torch.Tensor, reconstruction: torch.Tensor,
             mean: torch.Tensor, sigma: torch.Tensor,
             kl_weight: float = 1e-6,
             pad_l1_weight: float = 0.0) -> VaeLossTerms:
    """Loss terms for a (B, N, 3) batch.

    l_abs is the mean squared error over x, y at all N positions (pads are
    legitimate targets); l_state the binary cross-entropy over pen states;
    l_kl the standard nonnegative KL to the unit Gaussian, summed per sample
    over latent elements then averaged over the batch.

    Pad rows are an exact convention, (0, 0, 1), not approximate geometry,
    and squared error alone lets their reconstructions stall at small
    offsets large enough to blur the length boundary.  pad_l1_weight > 0
    adds an L1 pull toward zero on the reconstructed pad positions; the
    term is reported as l_pad (None when disabled).
    """
    if target.shape != reconstruction.shape:
        raise NumericalError(
            f"shape mismatch: {tuple(target.shape)} vs {tuple(reconstruction.shape)}")
    l_abs = torch.mean((target[:, :, :2] - reconstruction[:, :, :2]) ** 2)
    p_hat = reconstruction[:, :, 2]
    with torch.no_grad():
        if float(p_hat.min()) < 0.0 or float(p_hat.max()) > 1.0:
            raise NumericalError("pen probabilities must lie in [0, 1]")
    p_hat = p_hat.clamp(PEN_CLAMP_EPS, 1.0 - PEN_CLAMP_EPS)
    p = target[:, :, 2]
    l_state = -torch.mean(p * torch.log(p_hat) + (1.0 - p) * torch.log(1.0 - p_hat))
    var = sigma ** 2
    kl_per_sample = 0.5 * torch.sum(
        mean ** 2 + var - 1.0 - torch.log(var), dim=tuple(range(1, mean.dim())))
    l_kl = kl_per_sample.mean()
    total = l_abs + l_state + kl_weight * l_kl
    l_pad = None
    if pad_l1_weight > 0.0:
        pad_mask = ((target[:, :, 0] == 0.0) & (target[:, :, 1] == 0.0)
                    & (target[:, :, 2] == 1.0))
        if bool(pad_mask.any()):
            l_pad = reconstruction[:, :, :2][pad_mask].abs().mean()
        else:
            l_pad = reconstruction.new_zeros(())
        total = total + pad_l1_weight * l_pad
    return VaeLossTerms(l_abs=l_abs, l_state=l_state, l_kl=l_kl, total=total,
                        l_pad=l_pad)
