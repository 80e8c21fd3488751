"""Checkpoint container for training state.

One file holds module weights, optimizer state, the effective config, the
numpy RNG state, and the step counter, so a resumed run replays the exact
trajectory of an uninterrupted one. Files are written atomically (temp file +
rename) so a crash never leaves a truncated checkpoint behind.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .config import ExperimentConfig

__all__ = ["FORMAT_VERSION", "Checkpoint", "save_checkpoint", "load_checkpoint", "checkpoint_hash"]

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    step: int
    config: ExperimentConfig
    modules: dict[str, dict]      # name -> state_dict
    optimizers: dict[str, dict]   # name -> state_dict
    rng_state: dict
    extra: dict[str, Any]

    def make_rng(self) -> np.random.Generator:
        """Reconstruct the numpy Generator exactly where it left off."""
        gen = np.random.default_rng()
        gen.bit_generator.state = self.rng_state
        return gen

    def load_into(self, modules: dict[str, torch.nn.Module],
                  optimizers: dict[str, torch.optim.Optimizer] | None = None) -> None:
        """Restore weights (and optionally optimizer state) by name."""
        for name, module in modules.items():
            if name not in self.modules:
                raise KeyError(f"checkpoint has no module {name!r}; found {sorted(self.modules)}")
            module.load_state_dict(self.modules[name])
        if optimizers:
            for name, opt in optimizers.items():
                if name not in self.optimizers:
                    raise KeyError(f"checkpoint has no optimizer {name!r}")
                opt.load_state_dict(self.optimizers[name])


def save_checkpoint(
    path: str | Path,
    step: int,
    config: ExperimentConfig,
    modules: dict[str, torch.nn.Module],
    optimizers: dict[str, torch.optim.Optimizer] | None = None,
    rng: np.random.Generator | None = None,
    extra: dict[str, Any] | None = None,
) -> None:
    path = Path(path)
    payload = {
        "format_version": FORMAT_VERSION,
        "step": step,
        "config": dataclasses.asdict(config),
        "modules": {k: m.state_dict() for k, m in modules.items()},
        "optimizers": {k: o.state_dict() for k, o in (optimizers or {}).items()},
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "extra": extra or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    # Checkpoints are produced locally by this package; full unpickling is fine.
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {version!r} (expected {FORMAT_VERSION})")
    return Checkpoint(
        step=payload["step"],
        config=ExperimentConfig(**payload["config"]),
        modules=payload["modules"],
        optimizers=payload["optimizers"],
        rng_state=payload["rng_state"],
        extra=payload.get("extra", {}),
    )


def checkpoint_hash(path: str | Path) -> str:
    """Short content digest of a checkpoint file, used as the model version."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]
