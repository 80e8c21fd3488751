"""Metric identities, report math against hand-computed values, frozen CSV
schemas, and the Frechet-distance implementation."""

import csv
import dataclasses
import warnings

import numpy as np
import pytest
import torch

from obfuskit.data import AttrImageDataset
from obfuskit.evalkit import (
    HIST_BINS,
    HIST_HEADER,
    INVERSION_HEADER,
    SCATTER_HEADER,
    TRADEOFF_HEADER,
    UNCERTAINTY_HEADER,
    compute_fid,
    eval_inversion,
    eval_uncertainty,
    export_histograms,
    export_scatter,
    fid_from_features,
    shannon_entropy,
    tradeoff_sweep,
)
from obfuskit.modelio import AdversaryBundle, ModelBundle

# independently derived: H(0.8) = -0.8*log2(0.8) - 0.2*log2(0.2)
H_08 = 0.7219280948873623


def test_entropy_identities():
    assert shannon_entropy(0.5) == 1.0
    assert shannon_entropy(0.0) == 0.0
    assert shannon_entropy(1.0) == 0.0
    grid = np.linspace(0.0, 1.0, 101)
    np.testing.assert_allclose(shannon_entropy(grid), shannon_entropy(1.0 - grid),
                               atol=1e-12)
    rising = shannon_entropy(np.linspace(0.0, 0.5, 51))
    assert (np.diff(rising) > 0).all()
    assert shannon_entropy(0.8) == pytest.approx(H_08, abs=1e-12)
    assert isinstance(shannon_entropy(0.3), float)
    assert shannon_entropy(np.array([0.1, 0.9])).shape == (2,)
    for bad in (-0.1, 1.1):
        with pytest.raises(ValueError):
            shannon_entropy(bad)
        with pytest.raises(ValueError):
            shannon_entropy(np.array([0.5, bad]))


def _exact_identity_features(k: int) -> np.ndarray:
    """2k feature rows with sample mean exactly 0, sample covariance exactly I
    (np.cov normalizes by n-1 = 2k-1)."""
    scaled = np.eye(k) * np.sqrt((2 * k - 1) / 2.0)
    return np.concatenate([scaled, -scaled])


def test_fid_matches_analytic_gaussian_distance():
    a = _exact_identity_features(6)
    for d in (0.5, 1.0, 2.0):
        b = a.copy()
        b[:, 0] += d
        assert fid_from_features(a, b) == pytest.approx(d * d, rel=1e-9)
    # pure covariance scaling: FID = k (1 - s)^2 for Sigma_b = s^2 I
    assert fid_from_features(a, 2.0 * a) == pytest.approx(6.0, rel=1e-9)


def test_fid_on_sampled_gaussians_within_one_percent():
    rng = np.random.default_rng(0)
    n, dim = 1_000_000, 4
    for d in (0.5, 1.0, 2.0):
        a = rng.standard_normal((n, dim))
        b = rng.standard_normal((n, dim))
        b[:, 0] += d
        assert fid_from_features(a, b) == pytest.approx(d * d, rel=0.01)


def test_fid_identity_and_symmetry():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((64, 5))
    b = rng.standard_normal((64, 5)) * 1.3 + 0.2
    assert fid_from_features(a, a) <= 1e-6
    forward, backward = fid_from_features(a, b), fid_from_features(b, a)
    assert forward >= 0.0
    assert abs(forward - backward) <= 1e-6


def test_fid_rank_deficient_input_stays_finite():
    rng = np.random.default_rng(2)
    base = rng.standard_normal((40, 3)) @ rng.standard_normal((3, 8))
    other = rng.standard_normal((40, 3)) @ rng.standard_normal((3, 8))
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)  # must not warn spuriously
        value = fid_from_features(base, base)
        cross = fid_from_features(base, other)
    assert 0.0 <= value <= 1e-6
    assert np.isfinite(cross) and cross >= 0.0


def test_fid_validation():
    good = np.zeros((8, 3))
    with pytest.raises(ValueError):
        fid_from_features(good, np.zeros((8, 4)))
    with pytest.raises(ValueError):
        fid_from_features(np.zeros(8), good)
    with pytest.raises(ValueError) as err:
        fid_from_features(np.zeros((3, 3)), good)
    assert "dim+1" in str(err.value)


def test_compute_fid_extractors(tiny_run, tiny_ds):
    adv = AdversaryBundle.load(tiny_run["adversary"])
    assert compute_fid(tiny_ds.images, tiny_ds.images, adv) <= 1e-6

    def grab(x):
        return x.flatten(1)[:, :5]

    assert compute_fid(tiny_ds.images, tiny_ds.images, grab) <= 1e-6
    assert compute_fid(tiny_ds.images, tiny_ds.images * 0.9, grab) > 0.0


def test_golden_headers():
    assert INVERSION_HEADER == ("attribute", "kind", "tpr", "tnr", "acc", "n")
    assert UNCERTAINTY_HEADER == ("attribute", "direction", "n",
                                  "entropy_real", "entropy_ours", "entropy_gain",
                                  "prob_real", "prob_ours", "prob_gain")
    assert TRADEOFF_HEADER == ("delta2", "privacy", "utility")
    assert SCATTER_HEADER == ("kind", "p_before", "p_after")
    assert HIST_HEADER == ("bin_left", "bin_right", "original", "inverted", "obfuscated")
    assert HIST_BINS == 20


class _IdentityModel:
    """Stub obfuscator that changes nothing; isolates the report math."""

    def invert(self, x, mask, values):
        return x.clone()

    def obfuscate(self, x, target):
        return x.clone(), torch.ones(x.shape[0], x.shape[2], x.shape[3])


class _ZeroModel:
    """Stub that blacks out every image."""

    def invert(self, x, mask, values):
        return torch.zeros_like(x)

    def obfuscate(self, x, target):
        return torch.zeros_like(x), torch.zeros(x.shape[0], x.shape[2], x.shape[3])


class _SumAdversary:
    """Duck-typed adversary: p = 0.8 for any nonzero image, 0.5 for blank."""

    def __init__(self, attr_names):
        self.attr_names = tuple(attr_names)

    def predict_proba(self, x):
        alive = x.flatten(1).abs().sum(dim=1) > 0
        p = torch.where(alive, torch.tensor(0.8, dtype=torch.float64),
                        torch.tensor(0.5, dtype=torch.float64))
        return p.unsqueeze(1).repeat(1, len(self.attr_names))


def test_eval_inversion_identity_model(tiny_run, tiny_ds, tmp_path):
    adv = AdversaryBundle.load(tiny_run["adversary"])
    report = eval_inversion(_IdentityModel(), adv, tiny_ds,
                            out_path=tmp_path / "inv.csv")
    assert report.attributes() == list(tiny_ds.attr_names)
    assert len(report.rows) == 2 * tiny_ds.n_attrs
    for name in tiny_ds.attr_names:
        assert report.acc(name, "real") == report.acc(name, "inverted")
    assert not report.warnings
    assert all(row["n"] == len(tiny_ds) for row in report.rows)

    rows = list(csv.reader(open(tmp_path / "inv.csv")))
    assert rows[0] == list(INVERSION_HEADER)
    assert len(rows) - 1 == 2 * tiny_ds.n_attrs
    assert all(0.0 <= float(r[4]) <= 1.0 for r in rows[1:])
    with pytest.raises(KeyError):
        report.acc("warm_fill", "no_such_kind")


def test_eval_inversion_validation(tiny_run, tiny_ds):
    adv = AdversaryBundle.load(tiny_run["adversary"])
    with pytest.raises(ValueError):
        eval_inversion(_IdentityModel(), adv, tiny_ds, attrs=["no_such_attr"])
    renamed = dataclasses.replace(adv, attr_names=("a", "b", "c", "d"))
    with pytest.raises(ValueError):
        eval_inversion(_IdentityModel(), renamed, tiny_ds)


def test_eval_inversion_unbalanced_data_warns(tiny_run, tiny_ds):
    adv = AdversaryBundle.load(tiny_run["adversary"])
    col = tiny_ds.labels[:, 0]
    idx = np.concatenate([np.flatnonzero(col == 1.0)[:5],
                          np.flatnonzero(col == 0.0)[:3]])
    lopsided = AttrImageDataset(
        images=tiny_ds.images[idx], labels=tiny_ds.labels[idx],
        attr_names=tiny_ds.attr_names, split="eval",
        value_range=tiny_ds.value_range,
    )
    report = eval_inversion(_IdentityModel(), adv, lopsided,
                            attrs=[tiny_ds.attr_names[0]])
    assert report.warnings and "unbalanced" in report.warnings[0]
    assert all(row["n"] == 6 for row in report.rows)


def test_eval_inversion_max_eval(tiny_run, tiny_ds):
    adv = AdversaryBundle.load(tiny_run["adversary"])
    report = eval_inversion(_IdentityModel(), adv, tiny_ds, max_eval=8)
    assert all(row["n"] == 8 for row in report.rows)


def test_eval_uncertainty_identity_model(tiny_run, tiny_ds):
    adv = AdversaryBundle.load(tiny_run["mixup_adversary"])
    report = eval_uncertainty(_IdentityModel(), adv, tiny_ds)
    assert len(report.rows) == 2 * tiny_ds.n_attrs
    assert {r["direction"] for r in report.rows} == {"pos_to_uncertain",
                                                     "neg_to_uncertain"}
    for row in report.rows:
        assert row["entropy_gain"] == 0.0
        assert row["prob_gain"] == 0.0
        assert row["n"] == len(tiny_ds) // 2
    assert report.mean_entropy_gain() == 0.0
    assert report.mean_prob_shift_toward_half() == 0.0


def test_eval_uncertainty_hand_computed(tiny_ds, tmp_path):
    """Blank obfuscations drop a synthetic adversary from p=0.8 to p=0.5;
    every table entry is then known in closed form."""
    adv = _SumAdversary(tiny_ds.attr_names)
    report = eval_uncertainty(_ZeroModel(), adv, tiny_ds,
                              out_path=tmp_path / "unc.csv")
    for row in report.rows:
        assert row["prob_real"] == pytest.approx(0.8, abs=1e-12)
        assert row["prob_ours"] == pytest.approx(0.5, abs=1e-12)
        assert row["prob_gain"] == pytest.approx(0.3, abs=1e-12)
        assert row["entropy_real"] == pytest.approx(H_08, abs=1e-12)
        assert row["entropy_ours"] == pytest.approx(1.0, abs=1e-12)
        assert row["entropy_gain"] == pytest.approx(1.0 - H_08, abs=1e-12)
    assert report.mean_entropy_gain() == pytest.approx(1.0 - H_08, abs=1e-12)
    assert report.mean_prob_shift_toward_half() == pytest.approx(0.3, abs=1e-12)

    rows = list(csv.reader(open(tmp_path / "unc.csv")))
    assert rows[0] == list(UNCERTAINTY_HEADER)
    assert len(rows) - 1 == 2 * tiny_ds.n_attrs


def test_export_scatter_contract(tiny_run, tiny_ds, tmp_path):
    model = ModelBundle.load(tiny_run["stage2"])
    adv = AdversaryBundle.load(tiny_run["mixup_adversary"])
    files = export_scatter(model, adv, tiny_ds, tmp_path)
    assert len(files) == 2 * tiny_ds.n_attrs
    for path in files:
        rows = list(csv.reader(open(path)))
        assert rows[0] == list(SCATTER_HEADER)
        kinds = [r[0] for r in rows[1:]]
        n_points = len(tiny_ds) // 2
        assert kinds == ["point"] * n_points + ["mean", "std"]
        points = np.array([[float(r[1]), float(r[2])] for r in rows[1:1 + n_points]])
        mean_row = rows[1 + n_points]
        assert float(mean_row[1]) == pytest.approx(points[:, 0].mean(), abs=1e-9)
        assert float(mean_row[2]) == pytest.approx(points[:, 1].mean(), abs=1e-9)


def test_export_histograms_contract(tiny_run, tiny_ds, tmp_path):
    model = ModelBundle.load(tiny_run["stage2"])
    adv = AdversaryBundle.load(tiny_run["mixup_adversary"])
    files = export_histograms(model, adv, tiny_ds, tmp_path)
    assert len(files) == 2 * 2 * tiny_ds.n_attrs  # attr x cluster x kind
    cluster_n = len(tiny_ds) // 2
    for path in files:
        rows = list(csv.reader(open(path)))
        assert rows[0] == list(HIST_HEADER)
        body = rows[1:]
        assert len(body) == HIST_BINS
        assert float(body[0][0]) == 0.0 and float(body[-1][1]) == 1.0
        for prev, cur in zip(body, body[1:]):
            assert float(prev[1]) == pytest.approx(float(cur[0]), abs=1e-12)
        for col in (2, 3, 4):
            assert sum(int(r[col]) for r in body) == cluster_n

    smaller = export_histograms(model, adv, tiny_ds, tmp_path / "b10",
                                attrs=[tiny_ds.attr_names[0]], bins=10)
    assert len(smaller) == 4
    assert len(list(csv.reader(open(smaller[0])))) == 11


def test_tradeoff_sweep_validation(tiny_cfg, tiny_ds, tmp_path):
    with pytest.raises(ValueError):
        tradeoff_sweep(tiny_cfg, [], tiny_ds, tmp_path)
    with pytest.raises(ValueError):
        tradeoff_sweep(tiny_cfg, [-0.1], tiny_ds, tmp_path)


def test_tradeoff_sweep_tiny(tiny_cfg, tiny_ds, tiny_run, tmp_path):
    adv = AdversaryBundle.load(tiny_run["adversary"])
    rows = tradeoff_sweep(tiny_cfg, [0.0, 0.1], tiny_ds, tmp_path, adversary=adv)
    assert [r["delta2"] for r in rows] == [0.0, 0.1]
    for row in rows:
        assert 0.0 <= row["privacy"] <= 1.0
        assert 0.0 <= row["utility"] <= 1.0
    assert (tmp_path / "delta2_0" / "stage1.pt").exists()
    assert (tmp_path / "delta2_0.1" / "stage1.pt").exists()
    table = list(csv.reader(open(tmp_path / "tradeoff.csv")))
    assert table[0] == list(TRADEOFF_HEADER)
    assert len(table) - 1 == 2
