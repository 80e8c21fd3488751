"""Frozen-model inference bundles shared by evaluation, the CLI, and the
service layer.

A bundle wraps the networks from one checkpoint in eval mode with gradients
off, exposes the test-time code-editing semantics (explicit set / invert of
the rounded code, Stage-II mixing), and carries the attribute names and a
content-hash model version."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import checkpoint_hash, load_checkpoint
from .config import ExperimentConfig
from .data import AttrImageDataset
from .nets import AdversaryNet, LatentPair, build_adversary, build_mixer, build_stage1_nets, mix_images

__all__ = [
    "EditAction",
    "EDIT_ACTIONS",
    "ModelBundle",
    "AdversaryBundle",
    "dataset_tensors",
    "images_to_tensor",
    "tensor_to_images",
]

EDIT_ACTIONS = ("set0", "set1", "invert", "obfuscate")
EditAction = str


def dataset_tensors(ds: AttrImageDataset) -> tuple[torch.Tensor, torch.Tensor]:
    """Dataset as (N, C, H, W) image and (N, n_attrs) label tensors."""
    return images_to_tensor(ds.images), torch.from_numpy(ds.labels.copy())


def images_to_tensor(images: np.ndarray) -> torch.Tensor:
    if images.ndim == 3:
        images = images[None]
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))


def tensor_to_images(x: torch.Tensor) -> np.ndarray:
    return x.detach().permute(0, 2, 3, 1).contiguous().numpy()


def _freeze(*modules: torch.nn.Module) -> None:
    for m in modules:
        m.eval()
        m.requires_grad_(False)


@dataclass
class ModelBundle:
    """Stage-I (inversion only) or Stage-II (inversion + mixing) model."""

    encoder: torch.nn.Module
    decoder: torch.nn.Module
    disc: torch.nn.Module
    mixer: torch.nn.Module | None
    config: ExperimentConfig
    attr_names: tuple[str, ...]
    model_version: str

    @property
    def stage(self) -> int:
        return 2 if self.mixer is not None else 1

    @classmethod
    def load(cls, path: str | Path) -> "ModelBundle":
        ck = load_checkpoint(path)
        stage = ck.extra.get("stage")
        if stage not in (1, 2):
            raise ValueError(f"{path} is not a stage-1/stage-2 checkpoint (stage={stage!r})")
        netcfg = ck.config.net_config()
        enc, dec, disc = build_stage1_nets(netcfg, seed=0, bidirectional=ck.config.bidirectional)
        mixer = build_mixer(netcfg, seed=0) if stage == 2 else None
        modules = {"encoder": enc, "decoder": dec, "disc": disc}
        if mixer is not None:
            modules["mixer"] = mixer
        ck.load_into(modules)
        _freeze(enc, dec, disc, *([mixer] if mixer else []))
        attr_names = tuple(ck.extra.get("attr_names", ()))
        return cls(enc, dec, disc, mixer, ck.config, attr_names, checkpoint_hash(path))

    def encode(self, x: torch.Tensor) -> LatentPair:
        with torch.no_grad():
            return self.encoder(x)

    def code_bits(self, x: torch.Tensor) -> torch.Tensor:
        """Rounded sensitive code: the model's own estimate of each attribute."""
        return self.encode(x).c.clamp(0.0, 1.0).round()

    def invert(self, x: torch.Tensor, mask: torch.Tensor, values: torch.Tensor) -> torch.Tensor:
        """Decode with the code overwritten by `values` at masked positions."""
        with torch.no_grad():
            lat = self.encoder(x)
            c_bar = lat.c * (1.0 - mask) + values * mask
            return self.decoder(x, lat, c_bar)

    def reconstruct(self, x: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            lat = self.encoder(x)
            return self.decoder(x, lat, lat.c)

    def apply_edits(
        self, x: torch.Tensor, edits: list[tuple[int, EditAction]]
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Run the test-time editing path.

        set0/set1 assign the code bit, invert flips the rounded code, and
        obfuscate flips it then routes the result through Stage-II mixing.
        Returns (output image, lambda map or None). An empty edit list is the
        identity. At most one action per attribute index.
        """
        n_attrs = len(self.attr_names)
        seen: set[int] = set()
        for idx, action in edits:
            if not 0 <= idx < n_attrs:
                raise ValueError(f"attribute index {idx} out of range for {n_attrs} attributes")
            if action not in EDIT_ACTIONS:
                raise ValueError(f"unknown edit action {action!r}")
            if idx in seen:
                raise ValueError(f"multiple actions for attribute index {idx}")
            seen.add(idx)
        if not edits:
            return x.clone(), None
        mix_targets = [idx for idx, action in edits if action == "obfuscate"]
        if mix_targets and self.mixer is None:
            raise ValueError("obfuscate edits require a stage-2 checkpoint with a mixing network")

        with torch.no_grad():
            lat = self.encoder(x)
            bits = lat.c.clamp(0.0, 1.0).round()
            c_bar = lat.c.clone()
            for idx, action in edits:
                if action == "set0":
                    c_bar[:, idx] = 0.0
                elif action == "set1":
                    c_bar[:, idx] = 1.0
                else:  # invert / obfuscate
                    c_bar[:, idx] = 1.0 - bits[:, idx]
            x_bar = self.decoder(x, lat, c_bar)
            if not mix_targets:
                return x_bar, None
            lam = self.mixer(x, x_bar, lat.c, c_bar)
            return mix_images(x, x_bar, lam), lam

    def obfuscate(self, x: torch.Tensor, target: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Stage-II obfuscation of one attribute; returns (x', lambda map)."""
        out, lam = self.apply_edits(x, [(target, "obfuscate")])
        return out, lam

    def mix_edit(
        self, x: torch.Tensor, target: int, value: float | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Stage-II mixing with an explicit target code value (None flips the
        rounded code, same as the plain obfuscate action)."""
        if value is None:
            return self.obfuscate(x, target)
        if self.mixer is None:
            raise ValueError("mixing requires a stage-2 checkpoint with a mixing network")
        if value not in (0.0, 1.0):
            raise ValueError(f"explicit code values must be 0 or 1, got {value}")
        with torch.no_grad():
            lat = self.encoder(x)
            c_bar = lat.c.clone()
            c_bar[:, target] = value
            x_bar = self.decoder(x, lat, c_bar)
            lam = self.mixer(x, x_bar, lat.c, c_bar)
            return mix_images(x, x_bar, lam), lam


@dataclass
class AdversaryBundle:
    model: AdversaryNet
    config: ExperimentConfig
    attr_names: tuple[str, ...]
    mixup: bool
    model_version: str

    @classmethod
    def load(cls, path: str | Path) -> "AdversaryBundle":
        ck = load_checkpoint(path)
        if not ck.extra.get("adversary"):
            raise ValueError(f"{path} is not an adversary checkpoint")
        model = build_adversary(ck.config.net_config(), seed=0)
        ck.load_into({"adversary": model})
        _freeze(model)
        return cls(
            model, ck.config, tuple(ck.extra.get("attr_names", ())),
            bool(ck.extra.get("mixup", False)), checkpoint_hash(path),
        )

    def predict_proba(self, x: torch.Tensor, batch: int = 256) -> torch.Tensor:
        with torch.no_grad():
            return torch.cat(
                [self.model.predict_proba(x[i : i + batch]) for i in range(0, len(x), batch)]
            )

    def features(self, x: torch.Tensor, batch: int = 256) -> torch.Tensor:
        with torch.no_grad():
            return torch.cat(
                [self.model.features(x[i : i + batch]) for i in range(0, len(x), batch)]
            )
