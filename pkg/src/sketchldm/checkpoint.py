"""Versioned checkpoint files for every trained artifact in the package."""

from __future__ import annotations

from pathlib import Path

import torch

from .errors import InvalidInputError

FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, kind: str, config: dict,
                    model: torch.nn.Module, optimizer=None, scheduler=None,
                    step: int = 0, generator: torch.Generator | None = None,
                    extra: dict | None = None) -> Path:
    """Serialize model state plus everything needed for bit-equal resume."""
    payload = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "state_dict": model.state_dict(),
        "step": step,
        "extra": extra or {},
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    if scheduler is not None:
        payload["scheduler"] = scheduler.state_dict()
    if generator is not None:
        payload["generator_state"] = generator.get_state()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path, expect_kind: str | None = None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or "version" not in payload:
        raise InvalidInputError(f"{path}: not a checkpoint file")
    if payload["version"] != FORMAT_VERSION:
        raise InvalidInputError(
            f"{path}: unsupported checkpoint version {payload['version']}")
    if expect_kind is not None and payload.get("kind") != expect_kind:
        raise InvalidInputError(
            f"{path}: expected a {expect_kind!r} checkpoint, found "
            f"{payload.get('kind')!r}")
    return payload
