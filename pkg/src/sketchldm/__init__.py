"""Abstraction-controllable vector sketch synthesis.

Two-stage pipeline: a sequence VAE compresses stroke-3 sketches along the
temporal axis, and a transformer latent diffusion model denoises in that
space under class or photo conditioning.  Point-count and stroke-count
control enter through state embeddings and a stroke token.
"""

__version__ = "0.1.0"
