"""Sequence VAE compressing stroke-3 sketches 4x along the temporal axis."""

from .model import SketchVae, VaeConfig
from .loss import VaeLossTerms, vae_loss
from .train import compute_latent_std, load_vae, records_to_tensor, train_vae

__all__ = [
    "SketchVae",
    "VaeConfig",
    "VaeLossTerms",
    "vae_loss",
    "compute_latent_std",
    "load_vae",
    "records_to_tensor",
    "train_vae",
]
