"""Acceptance gate: the shipped behavioral criteria, one test (one pass/fail
line under ``pytest -v``) per criterion, at the stated tolerances.

Criteria 6 and 7 train at desk scale and carry the ``slow`` marker; everything
else completes in seconds to a couple of minutes.
"""

import csv
import dataclasses
import time

import numpy as np
import pytest
import torch

torch.set_num_threads(1)

import test_losses as loss_oracles
from obfuskit.config import ExperimentConfig
from obfuskit.data import gen_shape_attr, gen_two_gaussians
from obfuskit.evalkit import (
    TRADEOFF_HEADER,
    eval_inversion,
    eval_uncertainty,
    fid_from_features,
    shannon_entropy,
    tradeoff_sweep,
)
from obfuskit.modelio import AdversaryBundle, ModelBundle, dataset_tensors
from obfuskit.nets import MixNet, NetConfig, mix_images
from obfuskit.train import (
    toy_default_config,
    train_adversary,
    train_stage1,
    train_stage2,
    train_toy,
)

# Desk-scale data shared by criteria 6 and 7: four binary attributes on
# 32-px shapes, sizes matching the calibrated preset.
DESK_TRAIN = dict(n=2048, size=32, seed=0)
DESK_EVAL = dict(n=512, size=32, seed=1, split="eval")

# Criterion 7 retrains stage 1 nine times (3 modes x 3 seeds), so it runs the
# ablation at a reduced iteration budget where the ordering is already stable.
ABLATION_ITERS = 1500


def _desk_cfg(**overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(desk_scale_overrides=True).effective()
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


@pytest.fixture(scope="module")
def desk_data():
    return gen_shape_attr(**DESK_TRAIN), gen_shape_attr(**DESK_EVAL)


def test_criterion_1_toy_two_gaussians(tmp_path):
    """Bidirectional translation lands >= 90% of points in the target cluster
    both ways; the plain-classifier baseline collapses toward the midpoint
    (axial ratio < 0.6); whole experiment <= 5 min on one core."""
    t0 = time.time()
    pts = gen_two_gaussians(256, std=0.5, seed=0)
    report = train_toy(toy_default_config(), pts, tmp_path)
    elapsed = time.time() - t0

    bi = report.modes["bidirectional"]
    assert bi.success_pos_to_neg >= 0.90, f"pos->neg success {bi.success_pos_to_neg:.3f}"
    assert bi.success_neg_to_pos >= 0.90, f"neg->pos success {bi.success_neg_to_pos:.3f}"
    ratio = report.axial_ratio("d_attr")
    assert ratio < 0.6, f"d_attr/bidirectional axial distance ratio {ratio:.3f}"
    assert elapsed <= 300.0, f"toy run took {elapsed:.0f}s"


def test_criterion_2_loss_oracles_and_gradients():
    """Every loss matches an independent scalar re-implementation within 1e-6
    on 100 random tiny batches; float64 gradient checks pass at rtol 1e-3."""
    loss_oracles.test_all_losses_match_oracles_on_100_random_batches(
        np.random.default_rng(0)
    )
    for k, grad_test in enumerate(
        (
            loss_oracles.test_gradcheck_loss_bi,
            loss_oracles.test_gradcheck_attr_real,
            loss_oracles.test_gradcheck_rec_cclf,
            loss_oracles.test_gradcheck_adv,
            loss_oracles.test_gradcheck_reg_active_hinge,
            loss_oracles.test_gradcheck_util_and_entropy,
        ),
        start=1,
    ):
        grad_test(np.random.default_rng(k))


def test_criterion_3_label_editing_law():
    """10^5 draws at N_A=10: unedited positions bit-preserved; edit count
    uniform on {1..5} and positions uniform (chi-squared p > 0.01)."""
    loss_oracles.test_edit_code_law_chi_squared()


def test_criterion_4_mixing_algebra():
    """lambda == 1 returns x, lambda == 0 returns x_bar, arbitrary lambda obeys
    the interpolation identity within 1e-6, and predicted maps lie in [0,1]."""
    g = torch.Generator().manual_seed(0)
    x = torch.rand(4, 3, 16, 16, generator=g) * 2.0 - 1.0
    x_bar = torch.rand(4, 3, 16, 16, generator=g) * 2.0 - 1.0

    ones = torch.ones(4, 16, 16)
    assert torch.equal(mix_images(x, x_bar, ones), x)
    assert torch.equal(mix_images(x, x_bar, torch.zeros_like(ones)), x_bar)

    lam = torch.rand(4, 16, 16, generator=g)
    expect = lam.unsqueeze(1) * x + (1.0 - lam.unsqueeze(1)) * x_bar
    assert (mix_images(x, x_bar, lam) - expect).abs().max() <= 1e-6

    net = MixNet(NetConfig(image_size=16, n_attrs=4, mixer_width=8))
    c = torch.randint(0, 2, (4, 4), generator=g).float()
    with torch.no_grad():
        out = net(x, x_bar, c, 1.0 - c)
    assert out.shape == (4, 16, 16)
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_criterion_5_metric_identities():
    """Entropy: H(0.5)=1 bit, H(0)=H(1)=0, symmetry. FID: identity <= 1e-6 and
    the two-Gaussian analytic value d^2 within 1% for d in {0.5, 1, 2}."""
    assert shannon_entropy(0.5) == pytest.approx(1.0, abs=1e-12)
    assert shannon_entropy(0.0) == 0.0 and shannon_entropy(1.0) == 0.0
    for p in (0.03, 0.2, 0.41):
        assert shannon_entropy(p) == pytest.approx(shannon_entropy(1.0 - p), abs=1e-12)

    rng = np.random.default_rng(0)
    base = rng.standard_normal((200, 16))
    assert fid_from_features(base, base.copy()) <= 1e-6

    n, dim = 1_000_000, 4
    a = rng.standard_normal((n, dim))
    for d in (0.5, 1.0, 2.0):
        b = rng.standard_normal((n, dim))
        b[:, 0] += d
        fid = fid_from_features(a, b)
        assert abs(fid - d * d) <= 0.01 * d * d, f"FID {fid:.5f} vs d^2 {d * d}"


@pytest.mark.slow
def test_criterion_6_desk_scale_end_to_end(tmp_path, desk_data):
    """Full pipeline <= 30 min CPU: inversion drops the adversary from >= 95%
    to <= 40% on >= 3 of 4 attributes; obfuscation raises mean target entropy
    by >= 0.3 bits and moves the mean probability >= 0.15 toward 0.5."""
    t0 = time.time()
    ds, ds_eval = desk_data
    cfg = _desk_cfg()

    r1 = train_stage1(cfg, ds, tmp_path / "s1")
    r2 = train_stage2(cfg, ds, r1.checkpoint_path, tmp_path / "s2")
    adv = AdversaryBundle.load(train_adversary(ds, False, cfg, tmp_path / "adv").checkpoint_path)
    advm = AdversaryBundle.load(train_adversary(ds, True, cfg, tmp_path / "advm").checkpoint_path)
    model = ModelBundle.load(r2.checkpoint_path)

    inv = eval_inversion(model, adv, ds_eval, out_path=tmp_path / "inversion_report.csv")
    real = {r["attribute"]: r["acc"] for r in inv.rows if r["kind"] == "real"}
    inverted = {r["attribute"]: r["acc"] for r in inv.rows if r["kind"] == "inverted"}
    dropped = [a for a in real if real[a] >= 0.95 and inverted[a] <= 0.40]
    detail = {a: f"{real[a]:.2f}->{inverted[a]:.2f}" for a in real}
    assert len(dropped) >= 3, f"accuracy drops: {detail}"

    unc = eval_uncertainty(model, advm, ds_eval, out_path=tmp_path / "uncertainty_report.csv")
    gain = unc.mean_entropy_gain()
    assert gain >= 0.3, f"mean entropy gain {gain:.3f} bits"
    move = unc.mean_prob_shift_toward_half()
    assert move >= 0.15, f"mean probability moved {move:.3f} toward 0.5"

    elapsed = time.time() - t0
    assert elapsed <= 1800.0, f"pipeline took {elapsed:.0f}s"


@pytest.mark.slow
def test_criterion_7_ablation_ordering(tmp_path, desk_data):
    """Median over 3 seeds of mean post-inversion adversary accuracy:
    bidirectional strictly below both single-classifier baselines."""
    ds, ds_eval = desk_data
    adv = AdversaryBundle.load(
        train_adversary(ds, False, _desk_cfg(), tmp_path / "adv").checkpoint_path
    )

    mean_acc: dict[str, list[float]] = {}
    for seed in (0, 1, 2):
        for mode in ("bidirectional", "d_attr", "d_attr_plus_AT"):
            cfg = _desk_cfg(discriminator_mode=mode, seed=seed, iters_stage1=ABLATION_ITERS)
            r = train_stage1(cfg, ds, tmp_path / f"{mode}_{seed}")
            rep = eval_inversion(ModelBundle.load(r.checkpoint_path), adv, ds_eval)
            accs = [row["acc"] for row in rep.rows if row["kind"] == "inverted"]
            mean_acc.setdefault(mode, []).append(float(np.mean(accs)))

    med = {mode: float(np.median(v)) for mode, v in mean_acc.items()}
    assert med["bidirectional"] < med["d_attr"], f"medians {med}"
    assert med["bidirectional"] < med["d_attr_plus_AT"], f"medians {med}"


def test_criterion_8_delta2_sweep_schema(tmp_path):
    """Sweep report exists for delta2 in {0, 0.1, 0.2} with the documented
    privacy/utility schema; no monotonicity asserted."""
    cfg = ExperimentConfig(
        image_size=16, n_attrs=4, base_width=8, depth=2, adversary_width=8,
        adversary_blocks=2, mixer_width=8, batch_size=8, iters_stage1=40,
        iters_stage2=10, adversary_iters=40, log_every=10,
    )
    ds = gen_shape_attr(64, size=16, seed=0)
    ds_eval = gen_shape_attr(32, size=16, seed=1, split="eval")
    rows = tradeoff_sweep(cfg, [0.0, 0.1, 0.2], ds, tmp_path, ds_eval=ds_eval)

    with open(tmp_path / "tradeoff.csv", newline="") as fh:
        table = list(csv.reader(fh))
    assert table[0] == list(TRADEOFF_HEADER)
    assert [float(r[0]) for r in table[1:]] == [0.0, 0.1, 0.2]
    for row in rows:
        assert 0.0 <= row["privacy"] <= 1.0 and 0.0 <= row["utility"] <= 1.0


def test_criterion_9_determinism_and_persistence(tmp_path, tiny_cfg, tiny_ds):
    """Fixed seed reproduces the loss curves exactly; checkpoints round-trip
    to identical forward outputs."""
    r1 = train_stage1(tiny_cfg, tiny_ds, tmp_path / "a")
    r2 = train_stage1(tiny_cfg, tiny_ds, tmp_path / "b")
    assert r1.curve_path.read_bytes() == r2.curve_path.read_bytes()

    m1 = ModelBundle.load(r1.checkpoint_path)
    m2 = ModelBundle.load(r1.checkpoint_path)
    x, y = dataset_tensors(tiny_ds)
    x = x[:4].float()
    mask = torch.zeros_like(y[:4]).float()
    mask[:, 0] = 1.0
    values = 1.0 - y[:4].float()
    assert torch.equal(m1.invert(x, mask, values), m2.invert(x, mask, values))
    lat1, lat2 = m1.encoder(x), m2.encoder(x)
    assert torch.equal(lat1.c, lat2.c) and torch.equal(lat1.u, lat2.u)