"""Training-loop contracts: schedule math, fixed-seed determinism, bit-exact
resume, stage-2 freezing, adversary training, and the toy experiment."""

import csv
import dataclasses

import numpy as np
import pytest
import torch

from obfuskit.checkpoint import load_checkpoint
from obfuskit.config import ExperimentConfig
from obfuskit.data import LabeledPoints2D, gen_shape_attr, gen_two_gaussians
from obfuskit.modelio import AdversaryBundle, ModelBundle, dataset_tensors
from obfuskit.train import (
    lr_factor,
    toy_default_config,
    train_adversary,
    train_stage1,
    train_stage2,
    train_toy,
)


def test_lr_factor_schedule():
    assert lr_factor(0, 100) == 1.0
    assert lr_factor(50, 100) == 1.0
    assert lr_factor(75, 100) == pytest.approx(0.5)
    assert lr_factor(100, 100) == 0.0
    assert lr_factor(25, 100, start_frac=0.0) == pytest.approx(0.75)
    assert lr_factor(99, 100, start_frac=1.0) == 1.0  # never decays
    assert lr_factor(130, 100) == 0.0  # clamped past the end
    with pytest.raises(ValueError):
        lr_factor(0, 0)


def _read_curve(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_stage1_deterministic_rerun(tiny_cfg, tiny_ds, tmp_path):
    r1 = train_stage1(tiny_cfg, tiny_ds, tmp_path / "a")
    r2 = train_stage1(tiny_cfg, tiny_ds, tmp_path / "b")
    assert _read_curve(r1.curve_path) == _read_curve(r2.curve_path)
    assert r1.final_terms == r2.final_terms
    assert load_checkpoint(r1.checkpoint_path).step == tiny_cfg.iters_stage1

    x, _ = dataset_tensors(tiny_ds)
    m1 = ModelBundle.load(r1.checkpoint_path)
    m2 = ModelBundle.load(r2.checkpoint_path)
    with torch.no_grad():
        assert torch.equal(m1.reconstruct(x[:4]), m2.reconstruct(x[:4]))

    r3 = train_stage1(dataclasses.replace(tiny_cfg, seed=1), tiny_ds, tmp_path / "c")
    assert _read_curve(r3.curve_path) != _read_curve(r1.curve_path)


def test_stage1_resume_is_bit_exact(tiny_cfg, tiny_ds, tmp_path):
    # constant lr so the 3-iter run's schedule matches the 6-iter run's first half
    cfg = dataclasses.replace(tiny_cfg, decay_start_frac=1.0)
    whole = train_stage1(cfg, tiny_ds, tmp_path / "whole")

    half = train_stage1(dataclasses.replace(cfg, iters_stage1=3), tiny_ds, tmp_path / "half")
    resumed = train_stage1(cfg, tiny_ds, tmp_path / "resumed", resume=half.checkpoint_path)

    assert whole.final_terms == resumed.final_terms
    ck_a = load_checkpoint(whole.checkpoint_path)
    ck_b = load_checkpoint(resumed.checkpoint_path)
    for name in ck_a.modules:
        for key, val in ck_a.modules[name].items():
            assert torch.equal(val, ck_b.modules[name][key]), f"{name}.{key}"
    # the resumed curve covers steps 4..6; those rows must match the one-shot run
    whole_rows = {(r[0], r[1]): r[2] for r in _read_curve(whole.curve_path)[1:]}
    resumed_rows = _read_curve(resumed.curve_path)[1:]
    assert resumed_rows and all(
        whole_rows[(it, term)] == value for it, term, value in resumed_rows
    )


def test_stage1_rejects_mismatched_dataset(tiny_cfg, tmp_path):
    wrong = gen_shape_attr(16, size=32, seed=0)  # config wants 16x16
    with pytest.raises(ValueError):
        train_stage1(tiny_cfg, wrong, tmp_path / "x")


def test_stage2_freezes_stage1_weights(tiny_run):
    ck1 = load_checkpoint(tiny_run["stage1"])
    ck2 = load_checkpoint(tiny_run["stage2"])
    for name in ("encoder", "decoder", "disc"):
        for key, val in ck1.modules[name].items():
            assert torch.equal(val, ck2.modules[name][key]), f"{name}.{key}"
    assert "mixer" in ck2.modules
    assert ck2.extra["stage"] == 2


def test_stage2_validates_architecture(tiny_cfg, tiny_ds, tiny_run, tmp_path):
    bad = dataclasses.replace(tiny_cfg, base_width=16)
    with pytest.raises(ValueError) as err:
        train_stage2(bad, tiny_ds, tiny_run["stage1"], tmp_path / "s2bad")
    assert "base_width" in str(err.value)


def test_stage2_rejects_checkpoint_without_stage1_modules(tiny_cfg, tiny_ds, tiny_run, tmp_path):
    with pytest.raises(KeyError):
        train_stage2(tiny_cfg, tiny_ds, tiny_run["adversary"], tmp_path / "s2adv")


def test_adversary_training_artifacts(tiny_run):
    ck = load_checkpoint(tiny_run["adversary"])
    assert ck.extra["adversary"] is True and ck.extra["mixup"] is False
    ckm = load_checkpoint(tiny_run["mixup_adversary"])
    assert ckm.extra["mixup"] is True
    assert ck.extra["attr_names"] == ckm.extra["attr_names"]
    assert str(tiny_run["adversary"]).endswith("adversary.pt")
    assert str(tiny_run["mixup_adversary"]).endswith("adversary_mixup.pt")


def test_adversary_learns_tiny_problem(tmp_path):
    """A short run on easy synthetic data separates at least one attribute."""
    cfg = ExperimentConfig(image_size=16, n_attrs=4, adversary_width=8,
                           adversary_blocks=2, base_width=8, depth=2,
                           batch_size=16, adversary_iters=300, seed=0)
    ds = gen_shape_attr(128, size=16, seed=0)
    res = train_adversary(ds, False, cfg, tmp_path / "adv")

    adv = AdversaryBundle.load(res.checkpoint_path)
    x, _ = dataset_tensors(ds)
    p = adv.predict_proba(x).numpy()
    acc = ((p >= 0.5) == (ds.labels >= 0.5)).mean(axis=0)
    assert acc.max() > 0.9


def test_toy_smoke_and_errors(tmp_path):
    cfg = dataclasses.replace(toy_default_config(), iters_stage1=40, log_every=20)
    pts = gen_two_gaussians(32, seed=0)
    report = train_toy(cfg, pts, tmp_path / "toy")
    assert set(report.modes) == {"bidirectional", "d_attr", "d_attr_plus_AT"}
    for res in report.modes.values():
        assert 0.0 <= res.success_pos_to_neg <= 1.0
        assert 0.0 <= res.success_neg_to_pos <= 1.0
        assert res.mean_axial_distance >= 0.0
    assert report.axial_ratio("bidirectional") == pytest.approx(1.0)
    names = {p.name for p in report.files}
    assert "toy_summary.csv" in names
    assert "translated_points.csv" in names
    assert {"confidence_grid_dpos.csv", "confidence_grid_dneg.csv",
            "confidence_grid_dattr.csv"} <= names

    single = gen_two_gaussians(8, seed=0)
    only_pos = LabeledPoints2D(points=single.points[single.labels == 1],
                               labels=single.labels[single.labels == 1])
    with pytest.raises(ValueError):
        train_toy(cfg, only_pos, tmp_path / "bad")
    with pytest.raises(ValueError):
        train_toy(cfg, pts, tmp_path / "bad2", modes=("no_such_mode",))


def test_toy_translated_points_schema(tmp_path):
    cfg = dataclasses.replace(toy_default_config(), iters_stage1=30, log_every=15)
    pts = gen_two_gaussians(16, seed=1)
    report = train_toy(cfg, pts, tmp_path / "toy")
    path = next(p for p in report.files if p.name == "translated_points.csv")
    rows = _read_curve(path)
    assert rows[0] == ["mode", "direction", "x", "y", "tx", "ty", "oracle_target_reached"]
    assert len(rows) - 1 == 3 * len(pts)  # every point, every mode
    assert {r[1] for r in rows[1:]} == {"pos_to_neg", "neg_to_pos"}
