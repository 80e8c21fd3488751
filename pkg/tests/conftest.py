"""Shared fixtures: tiny configs, tiny datasets, and one session-scoped
miniature training run reused by the evaluation / CLI / service tests."""

import numpy as np
import pytest
import torch

torch.set_num_threads(1)

from obfuskit.config import ExperimentConfig
from obfuskit.data import gen_shape_attr
from obfuskit import train as train_mod


@pytest.fixture(scope="session")
def tiny_cfg() -> ExperimentConfig:
    """Smallest config that still exercises every code path."""
    return ExperimentConfig(
        image_size=16,
        n_attrs=4,
        base_width=8,
        depth=2,
        adversary_width=8,
        adversary_blocks=2,
        mixer_width=8,
        batch_size=8,
        iters_stage1=6,
        iters_stage2=4,
        adversary_iters=8,
        checkpoint_every=0,
        log_every=2,
        seed=0,
    )


@pytest.fixture(scope="session")
def tiny_ds(tiny_cfg):
    return gen_shape_attr(32, size=tiny_cfg.image_size, seed=0)


@pytest.fixture(scope="session")
def tiny_eval_ds(tiny_cfg):
    return gen_shape_attr(16, size=tiny_cfg.image_size, seed=1, split="eval")


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, tiny_cfg, tiny_ds):
    """Miniature stage-1 + stage-2 + adversary training; returns checkpoint
    paths. Numerically meaningless, structurally complete."""
    out = tmp_path_factory.mktemp("tiny_run")
    r1 = train_mod.train_stage1(tiny_cfg, tiny_ds, out / "s1")
    r2 = train_mod.train_stage2(tiny_cfg, tiny_ds, r1.checkpoint_path, out / "s2")
    ra = train_mod.train_adversary(tiny_ds, False, tiny_cfg, out / "adv")
    rm = train_mod.train_adversary(tiny_ds, True, tiny_cfg, out / "advm")
    return {
        "stage1": r1.checkpoint_path,
        "stage2": r2.checkpoint_path,
        "adversary": ra.checkpoint_path,
        "mixup_adversary": rm.checkpoint_path,
        "dir": out,
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
