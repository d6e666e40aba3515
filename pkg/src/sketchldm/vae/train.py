"""VAE training loop: seeded, resumable, with per-component loss logging."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import torch

from ..checkpoint import load_checkpoint, save_checkpoint
from ..errors import NumericalError
from .loss import vae_loss
from .model import LATENT_CHANNELS, SketchVae, VaeConfig


def records_to_tensor(records) -> torch.Tensor:
    """Stack DatasetRecord sketches into a (count, N, 3) float32 tensor."""
    import numpy as np

    arr = np.stack([rec.sketch.points for rec in records])
    return torch.from_numpy(arr).float()


def compute_latent_std(model: SketchVae, data: torch.Tensor,
                       batch_size: int = 256) -> torch.Tensor:
    """Per-channel standard deviation of encoder means over a dataset.

    The reciprocal scales latents to roughly unit variance so the diffusion
    prior at z_T is consistent with the data it must reach.
    """
    means = []
    with torch.no_grad():
        for start in range(0, data.shape[0], batch_size):
            mean, _ = model.encode(data[start : start + batch_size])
            means.append(mean)
    flat = torch.cat(means).reshape(-1, LATENT_CHANNELS)
    return flat.std(dim=0)


def train_vae(data: torch.Tensor, config: VaeConfig, steps: int,
              batch_size: int = 64, lr: float = 1e-4, seed: int = 0,
              log_every: int = 50, csv_path: str | Path | None = None,
              checkpoint_path: str | Path | None = None,
              resume_from: str | Path | None = None,
              total_steps: int | None = None,
              extra_payload: dict | None = None) -> tuple[SketchVae, dict]:
    """Train a SketchVae on a (count, N, 3) tensor up to step `steps`.

    `total_steps` fixes the cosine decay horizon (defaults to `steps`); pass
    it when checkpointing mid-run so the schedule matches the eventual full
    run.  Deterministic under a fixed seed; resuming from a checkpoint
    reproduces the uninterrupted run bit for bit.  Raises on non-finite loss.
    """
    if data.dim() != 3 or data.shape[0] < 1:
        raise NumericalError(f"expected a (count, N, 3) tensor, got {tuple(data.shape)}")
    horizon = total_steps if total_steps is not None else steps
    if horizon < steps:
        raise NumericalError(f"total_steps ({horizon}) must be >= steps ({steps})")
    torch.manual_seed(seed)
    model = SketchVae(config)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=max(horizon, 1))
    generator = torch.Generator().manual_seed(seed)
    start_step = 0
    if resume_from is not None:
        payload = load_checkpoint(resume_from, expect_kind="vae")
        model.load_state_dict(payload["state_dict"])
        optimizer.load_state_dict(payload["optimizer"])
        scheduler.load_state_dict(payload["scheduler"])
        generator.set_state(payload["generator_state"])
        start_step = payload["step"]

    count = data.shape[0]
    rows = []
    last = None
    for step in range(start_step + 1, steps + 1):
        idx = torch.randint(0, count, (batch_size,), generator=generator)
        batch = data[idx]
        noise = torch.randn(batch_size, config.latent_length, LATENT_CHANNELS,
                            generator=generator)
        recon, mean, sigma = model(batch, noise)
        terms = vae_loss(batch, recon, mean, sigma, kl_weight=config.kl_weight,
                         pad_l1_weight=config.pad_l1_weight)
        if not torch.isfinite(terms.total):
            raise NumericalError(
                f"training diverged at step {step}: "
                f"abs={terms.l_abs.detach()} state={terms.l_state.detach()} "
                f"kl={terms.l_kl.detach()}")
        optimizer.zero_grad()
        terms.total.backward()
        optimizer.step()
        scheduler.step()
        last = terms
        if step % log_every == 0 or step == steps:
            rows.append((step, terms.l_abs.item(), terms.l_state.item(),
                         terms.l_kl.item(), terms.total.item(),
                         scheduler.get_last_lr()[0]))

    if csv_path is not None:
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with csv_path.open("w", encoding="utf-8") as fh:
            fh.write("step,l_abs,l_state,l_kl,total,lr\n")
            for row in rows:
                fh.write(",".join(f"{v}" for v in row) + "\n")

    latent_std = compute_latent_std(model, data)
    info = {
        "step": steps,
        "latent_std": latent_std,
        "rows": rows,
        "final": None if last is None else {
            "l_abs": last.l_abs.item(), "l_state": last.l_state.item(),
            "l_kl": last.l_kl.item(), "total": last.total.item()},
    }
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, kind="vae", config=asdict(config),
                        model=model, optimizer=optimizer, scheduler=scheduler,
                        step=steps, generator=generator,
                        extra={"latent_std": latent_std, **(extra_payload or {})})
    return model, info


def load_vae(path: str | Path) -> tuple[SketchVae, torch.Tensor, dict]:
    """Rebuild a trained VAE plus its stored latent scale from a checkpoint."""
    payload = load_checkpoint(path, expect_kind="vae")
    config = VaeConfig(**payload["config"])
    model = SketchVae(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    latent_std = payload["extra"]["latent_std"]
    return model, latent_std, payload
