"""Flat key=value experiment configuration.

Config files hold one `key = value` pair per line ('#' comments and blank
lines ignored). Every key must name a field of ExperimentConfig; unknown keys
are an error so typos fail loudly instead of silently training with defaults.
Command lines may override individual keys with repeated --set key=value.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .losses import LossWeights, Margins
from .nets import NetConfig

__all__ = [
    "DISCRIMINATOR_MODES",
    "ExperimentConfig",
    "parse_value",
    "load_config",
    "dump_config",
    "apply_overrides",
]

DISCRIMINATOR_MODES = ("bidirectional", "d_attr", "d_attr_plus_AT")


@dataclass
class ExperimentConfig:
    """Everything one run needs, flattened so files and --set stay one level."""

    # model
    profile: str = "image"
    image_size: int = 32
    channels: int = 3
    n_attrs: int = 4
    base_width: int = 32
    depth: int = 3
    vector_dim: int = 2
    vector_u_dim: int = 8
    adversary_width: int = 32
    adversary_blocks: int = 4
    mixer_width: int = 32
    spectral_norm: bool = True
    shared_trunk: bool = True
    discriminator_mode: str = "bidirectional"

    # optimization (full-scale defaults; see desk_scale_overrides)
    lr_generator: float = 1e-4
    lr_discriminator: float = 5e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 128
    iters_stage1: int = 300000
    iters_stage2: int = 100000
    decay: str = "linear_to_zero"
    decay_start_frac: float = 0.5
    d_steps: int = 1
    stage2_update_disc: bool = False
    seed: int = 0
    checkpoint_every: int = 0  # 0 = final checkpoint only
    desk_scale_overrides: bool = False

    # held-out adversary
    adversary_lr: float = 1e-3
    adversary_iters: int = 2000
    mixup_alpha: float = 1.0

    # objective
    delta1: float = 0.05
    delta2: float = 0.1
    delta3: float = 0.0
    lambda1: float = 1.0
    lambda2: float = 1.0

    # bookkeeping
    log_every: int = 100
    value_low: float = -1.0
    value_high: float = 1.0

    def __post_init__(self):
        if self.iters_stage1 < 1 or self.iters_stage2 < 1 or self.adversary_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_generator <= 0 or self.lr_discriminator <= 0 or self.adversary_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.profile not in ("image", "vector"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.discriminator_mode not in DISCRIMINATOR_MODES:
            raise ValueError(
                f"discriminator_mode must be one of {DISCRIMINATOR_MODES}, got {self.discriminator_mode!r}"
            )
        if self.decay != "linear_to_zero":
            raise ValueError(f"decay must be 'linear_to_zero', got {self.decay!r}")
        if not 0.0 <= self.decay_start_frac <= 1.0:
            raise ValueError("decay_start_frac must lie in [0, 1]")
        if self.d_steps < 1:
            raise ValueError("d_steps must be >= 1")
        if self.mixup_alpha <= 0:
            raise ValueError("mixup_alpha must be positive")
        if self.value_low >= self.value_high:
            raise ValueError("value_low must be < value_high")

    @property
    def bidirectional(self) -> bool:
        return self.discriminator_mode == "bidirectional"

    def effective(self) -> "ExperimentConfig":
        """Apply the small-run preset when desk_scale_overrides is set."""
        if not self.desk_scale_overrides:
            return self
        return dataclasses.replace(
            self,
            iters_stage1=3000,
            iters_stage2=400,
            batch_size=32,
            adversary_iters=400,
            checkpoint_every=0,
            desk_scale_overrides=False,
        )

    def net_config(self) -> NetConfig:
        return NetConfig(
            image_size=self.image_size,
            channels=self.channels,
            n_attrs=self.n_attrs,
            base_width=self.base_width,
            depth=self.depth,
            spectral_norm_on_discriminators=self.spectral_norm,
            shared_trunk=self.shared_trunk,
            profile=self.profile,
            value_range=(self.value_low, self.value_high),
            adversary_width=self.adversary_width,
            adversary_blocks=self.adversary_blocks,
            mixer_width=self.mixer_width,
            vector_dim=self.vector_dim,
            vector_u_dim=self.vector_u_dim,
        )

    def margins(self) -> Margins:
        return Margins(delta1=self.delta1, delta2=self.delta2, delta3=self.delta3)

    def weights(self) -> LossWeights:
        return LossWeights(lambda1=self.lambda1, lambda2=self.lambda2)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_value(key: str, raw: str):
    """Coerce a raw string to the declared type of the config field."""
    if key not in _FIELD_TYPES:
        raise KeyError(f"unknown config key {key!r}")
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    if ftype == "bool" or ftype is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key!r} expects a boolean, got {raw!r}")
    if ftype == "int" or ftype is int:
        return int(raw)
    if ftype == "float" or ftype is float:
        return float(raw)
    return raw


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Build a config from an optional file plus --set style overrides."""
    values: dict = {}
    if path is not None:
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = line.split("=", 1)
            key = key.strip()
            try:
                values[key] = parse_value(key, raw)
            except KeyError:
                raise KeyError(f"{path}:{lineno}: unknown config key {key!r}") from None
    cfg = ExperimentConfig(**values)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply 'key=value' strings on top of an existing config."""
    updates = {}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        updates[key.strip()] = parse_value(key.strip(), raw)
    return dataclasses.replace(cfg, **updates)


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    """Write the effective configuration as a loadable key=value file."""
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")
