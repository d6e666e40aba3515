"""Training and sampling for the latent diffusion stage.

Sketches are encoded once through a frozen VAE; the denoiser is trained on
encoder means divided by the per-channel latent std, so diffusion sees a
roughly unit-scale space.  Photo fine-tuning starts from a class-conditional
checkpoint, swaps the class table for cross-attention over cached photo
contexts, and trains only low-rank adapters plus the new layers.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from .backbone import BackboneConfig, ConditioningBundle, Denoiser
from .checkpoint import load_checkpoint, save_checkpoint
from .conditioning import DEFAULT_STROKE_MAX, LoraSpec, apply_lora, lora_parameters, merge_lora
from .diffusion import NoiseSchedule, diffusion_loss, make_schedule, sample_loop
from .errors import ConfigurationError, InvalidInputError, NumericalError
from .sketch_data.preprocess import count_strokes, decoded_to_sequence
from .sketch_data.types import SketchSequence
from .vae.model import SketchVae
from .vae.train import records_to_tensor


@dataclass
class LatentDataset:
    """Frozen-VAE encodings plus the conditions observed on each record."""

    z0: torch.Tensor              # (count, latent_length, 3), standardized
    point_count: torch.Tensor     # (count,) realized lengths
    stroke_count: torch.Tensor    # (count,) stroke counts
    class_id: torch.Tensor | None = None
    photo_id: torch.Tensor | None = None

    @property
    def count(self) -> int:
        return self.z0.shape[0]


def encode_dataset(records, vae: SketchVae, latent_std: torch.Tensor,
                   batch_size: int = 256) -> LatentDataset:
    """Encode records to standardized latent means, collecting conditions."""
    if not records:
        raise InvalidInputError("no records to encode")
    x = records_to_tensor(records)
    vae.eval()
    means = []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            mean, _ = vae.encode(x[start:start + batch_size])
            means.append(mean / latent_std)
    class_ids = [r.category_id for r in records]
    photo_ids = [r.photo_id for r in records]
    return LatentDataset(
        z0=torch.cat(means),
        point_count=torch.tensor([r.sketch.realized_length for r in records]),
        stroke_count=torch.tensor(
            [count_strokes(r.sketch).stroke_count for r in records]),
        class_id=None if any(c is None for c in class_ids)
        else torch.tensor(class_ids),
        photo_id=None if any(p is None for p in photo_ids)
        else torch.tensor(photo_ids),
    )


def _batch_bundle(data: LatentDataset, idx: torch.Tensor, cfg: BackboneConfig,
                  context_cache: dict | None) -> ConditioningBundle:
    kwargs = {}
    if cfg.use_class:
        kwargs["class_id"] = data.class_id[idx]
    if cfg.use_points:
        kwargs["point_count"] = data.point_count[idx]
    if cfg.use_strokes:
        kwargs["stroke_count"] = data.stroke_count[idx]
    if cfg.use_photo:
        kwargs["photo_context"] = torch.stack(
            [context_cache[int(data.photo_id[i])] for i in idx])
    return ConditioningBundle(**kwargs)


def _check_conditions(data: LatentDataset, cfg: BackboneConfig,
                      context_cache: dict | None) -> None:
    if cfg.use_class and data.class_id is None:
        raise InvalidInputError("class conditioning needs labeled records")
    if cfg.use_strokes and int(data.stroke_count.max()) > cfg.stroke_max:
        raise InvalidInputError(
            f"dataset contains {int(data.stroke_count.max())} strokes, "
            f"model accepts at most {cfg.stroke_max}")
    if cfg.use_photo:
        if data.photo_id is None:
            raise InvalidInputError("photo conditioning needs paired records")
        if context_cache is None:
            raise InvalidInputError("photo conditioning needs a context cache")
        missing = [int(p) for p in data.photo_id if int(p) not in context_cache]
        if missing:
            raise InvalidInputError(
                f"context cache is missing photo ids {sorted(set(missing))[:5]}")


def train_ldm(records, vae: SketchVae, latent_std: torch.Tensor, *,
              steps: int, batch_size: int = 64, lr: float = 1e-4, seed: int = 0,
              width: int = 192, depth: int = 6, head_count: int = 6,
              num_classes: int | None = None, use_class: bool = True,
              use_points: bool = True, use_strokes: bool = True,
              use_photo: bool = False, stroke_mode: str = "token",
              stroke_max: int = DEFAULT_STROKE_MAX,
              context_cache: dict | None = None,
              schedule: NoiseSchedule | None = None, log_every: int = 50,
              csv_path: str | Path | None = None,
              checkpoint_path: str | Path | None = None,
              resume_from: str | Path | None = None,
              total_steps: int | None = None,
              extra_payload: dict | None = None) -> tuple[Denoiser, dict]:
    """Train a denoiser over frozen-VAE latents up to step `steps`.

    Deterministic under a fixed seed; `total_steps` fixes the cosine horizon
    for checkpoint/resume splits exactly as in the VAE trainer.
    """
    horizon = total_steps if total_steps is not None else steps
    if horizon < steps:
        raise ConfigurationError(
            f"total_steps ({horizon}) must be >= steps ({steps})")
    if schedule is None:
        schedule = make_schedule()
    data = encode_dataset(records, vae, latent_std)
    if use_class and num_classes is None:
        if data.class_id is None:
            raise InvalidInputError("class conditioning needs labeled records")
        num_classes = int(data.class_id.max()) + 1
    if use_photo and not context_cache:
        raise InvalidInputError("photo conditioning needs a context cache")
    torch.manual_seed(seed)
    config = BackboneConfig(
        latent_length=vae.config.latent_length, width=width, depth=depth,
        head_count=head_count, ratio=vae.config.ratio,
        num_classes=num_classes or 0,
        context_width=next(iter(context_cache.values())).shape[-1]
        if use_photo else 64,
        stroke_max=stroke_max, use_class=use_class, use_points=use_points,
        use_strokes=use_strokes, use_photo=use_photo, stroke_mode=stroke_mode)
    model = Denoiser(config)
    _check_conditions(data, config, context_cache)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=max(horizon, 1))
    generator = torch.Generator().manual_seed(seed)
    start_step = 0
    if resume_from is not None:
        payload = load_checkpoint(resume_from, expect_kind="ldm")
        model.load_state_dict(payload["state_dict"])
        optimizer.load_state_dict(payload["optimizer"])
        scheduler.load_state_dict(payload["scheduler"])
        generator.set_state(payload["generator_state"])
        start_step = payload["step"]

    rows = []
    last = None
    for step in range(start_step + 1, steps + 1):
        idx = torch.randint(0, data.count, (batch_size,), generator=generator)
        bundle = _batch_bundle(data, idx, config, context_cache)
        loss = diffusion_loss(model, data.z0[idx], bundle, schedule, generator)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        scheduler.step()
        last = float(loss.item())
        if step % log_every == 0 or step == steps:
            rows.append((step, last, scheduler.get_last_lr()[0]))

    if csv_path is not None:
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with csv_path.open("w", encoding="utf-8") as fh:
            fh.write("step,loss,lr\n")
            for row in rows:
                fh.write(",".join(f"{v}" for v in row) + "\n")

    info = {"step": steps, "rows": rows, "final_loss": last}
    if checkpoint_path is not None:
        observed = {
            "point_counts": sorted(set(data.point_count.tolist())),
            "stroke_counts": sorted(set(data.stroke_count.tolist())),
        }
        save_checkpoint(checkpoint_path, kind="ldm", config=asdict(config),
                        model=model, optimizer=optimizer, scheduler=scheduler,
                        step=steps, generator=generator,
                        extra={"latent_std": latent_std,
                               "schedule": _schedule_params(schedule),
                               "observed": observed,
                               **(extra_payload or {})})
    return model, info


def _schedule_params(schedule: NoiseSchedule) -> dict:
    return {"T": schedule.T, "beta_start": float(schedule.betas[1]),
            "beta_end": float(schedule.betas[-1])}


def schedule_from_checkpoint(payload: dict) -> NoiseSchedule:
    params = payload["extra"]["schedule"]
    return make_schedule(T=params["T"], beta_start=params["beta_start"],
                         beta_end=params["beta_end"])


def load_ldm(path: str | Path) -> tuple[Denoiser, torch.Tensor, dict]:
    payload = load_checkpoint(path, expect_kind="ldm")
    model = Denoiser(BackboneConfig(**payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload["extra"]["latent_std"], payload


def _as_long_tensor(value, name: str) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        out = value.long()
    else:
        out = torch.as_tensor(value, dtype=torch.long)
    if out.dim() == 0:
        out = out[None]
    if out.dim() != 1:
        raise InvalidInputError(f"{name} must be scalar or 1d")
    return out


def sample_sketches(model: Denoiser, vae: SketchVae, latent_std: torch.Tensor, *,
                    count: int | None = None, class_id=None, point_count=None,
                    stroke_count=None, photo_context=None,
                    schedule: NoiseSchedule | None = None, seed: int = 0,
                    sample_steps: int | None = None) -> list[SketchSequence]:
    """Draw sketches from the trained pair; conditions are broadcast to the
    batch size implied by the longest condition (or `count`)."""
    if schedule is None:
        schedule = make_schedule()
    cfg = model.config
    conditions = {}
    if class_id is not None:
        conditions["class_id"] = _as_long_tensor(class_id, "class_id")
    if point_count is not None:
        conditions["point_count"] = _as_long_tensor(point_count, "point_count")
    if stroke_count is not None:
        conditions["stroke_count"] = _as_long_tensor(stroke_count, "stroke_count")
    if photo_context is not None:
        ctx = photo_context
        if ctx.dim() == 2:
            ctx = ctx[None]
        conditions["photo_context"] = ctx
    sizes = [v.shape[0] for v in conditions.values()]
    if count is None:
        if not sizes:
            raise InvalidInputError("give count or at least one condition")
        count = max(sizes)
    expanded = {}
    for name, v in conditions.items():
        if v.shape[0] == 1 and count > 1:
            v = v.expand(count, *v.shape[1:]) if v.dim() > 1 else v.repeat(count)
        if v.shape[0] != count:
            raise InvalidInputError(
                f"{name} has batch {v.shape[0]}, expected {count}")
        expanded[name] = v
    bundle = ConditioningBundle(**expanded)
    model.eval()
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        z = sample_loop(model, (count, cfg.latent_length, 3), bundle, schedule,
                        generator, steps=sample_steps)
        decoded = vae.decode(z * latent_std)
    return [decoded_to_sequence(d.numpy()) for d in decoded]


# ---------------------------------------------------------------------------
# photo fine-tuning


def copy_overlapping_weights(target: torch.nn.Module, source_state: dict) -> dict:
    """Copy every tensor whose name and shape match; report the rest."""
    target_state = target.state_dict()
    filtered, copied, mismatched = {}, [], []
    for name, tensor in target_state.items():
        if name in source_state:
            if source_state[name].shape == tensor.shape:
                filtered[name] = source_state[name]
                copied.append(name)
            else:
                mismatched.append(name)
    missing = [n for n in target_state if n not in filtered]
    unused = [n for n in source_state if n not in filtered]
    target.load_state_dict(filtered, strict=False)
    return {"copied": copied, "missing": missing, "unused": unused,
            "shape_mismatch": mismatched}


def finetune_photo(records, context_cache: dict, base: Denoiser,
                   vae: SketchVae, latent_std: torch.Tensor, *,
                   steps: int, lora: LoraSpec | None = None,
                   batch_size: int = 16, lr: float = 1e-4, seed: int = 0,
                   schedule: NoiseSchedule | None = None, log_every: int = 20,
                   csv_path: str | Path | None = None,
                   checkpoint_path: str | Path | None = None,
                   extra_payload: dict | None = None) -> tuple[Denoiser, dict, dict]:
    """Adapt a class-conditional denoiser to photo conditioning.

    The class table is dropped, cross-attention layers over the photo context
    are added, every inherited weight is frozen, and training touches only the
    low-rank adapters on the self-attention projections plus the new layers.
    Any checkpoint written has the adapters already folded in.
    """
    if lora is None:
        lora = LoraSpec()
    if schedule is None:
        schedule = make_schedule()
    if not context_cache:
        raise InvalidInputError("context cache is empty")
    base_cfg = base.config
    if base_cfg.use_photo:
        raise ConfigurationError("base model is already photo-conditional")
    context_width = next(iter(context_cache.values())).shape[-1]
    torch.manual_seed(seed)
    config = BackboneConfig(
        latent_length=base_cfg.latent_length, width=base_cfg.width,
        depth=base_cfg.depth, head_count=base_cfg.head_count,
        ratio=base_cfg.ratio, num_classes=0, context_width=context_width,
        stroke_max=base_cfg.stroke_max, use_class=False,
        use_points=base_cfg.use_points, use_strokes=base_cfg.use_strokes,
        use_photo=True, stroke_mode=base_cfg.stroke_mode)
    model = Denoiser(config)
    report = copy_overlapping_weights(model, base.state_dict())

    for p in model.parameters():
        p.requires_grad_(False)
    apply_lora(model.blocks, lora)
    trainables = list(lora_parameters(model))
    for p in trainables:
        p.requires_grad_(True)
    for layer in model.photo_cross:
        for p in layer.parameters():
            p.requires_grad_(True)
            trainables.append(p)

    data = encode_dataset(records, vae, latent_std)
    _check_conditions(data, config, context_cache)
    optimizer = torch.optim.Adam(trainables, lr=lr)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=max(steps, 1))
    generator = torch.Generator().manual_seed(seed)
    rows = []
    last = None
    for step in range(1, steps + 1):
        idx = torch.randint(0, data.count, (batch_size,), generator=generator)
        bundle = _batch_bundle(data, idx, config, context_cache)
        loss = diffusion_loss(model, data.z0[idx], bundle, schedule, generator)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        scheduler.step()
        last = float(loss.item())
        if step % log_every == 0 or step == steps:
            rows.append((step, last, scheduler.get_last_lr()[0]))

    if csv_path is not None:
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with csv_path.open("w", encoding="utf-8") as fh:
            fh.write("step,loss,lr\n")
            for row in rows:
                fh.write(",".join(f"{v}" for v in row) + "\n")

    info = {"step": steps, "rows": rows, "final_loss": last,
            "trainable_parameters": sum(p.numel() for p in trainables)}
    if checkpoint_path is not None:
        deployable = merge_lora(model)
        observed = {
            "point_counts": sorted(set(data.point_count.tolist())),
            "stroke_counts": sorted(set(data.stroke_count.tolist())),
        }
        save_checkpoint(checkpoint_path, kind="ldm", config=asdict(config),
                        model=deployable, step=steps,
                        extra={"latent_std": latent_std,
                               "schedule": _schedule_params(schedule),
                               "observed": observed,
                               "finetuned_from_class_model": True,
                               **(extra_payload or {})})
    return model, info, report
