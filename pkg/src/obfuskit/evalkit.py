"""Measurement suite: inversion rates, uncertainty tables, the privacy/utility
trade-off sweep, Frechet feature distance, and plot-ready CSV exports.

Conventions (documented in the README and frozen by golden-header tests):

* rates and probabilities are fractions in [0, 1], entropy is in bits
  (maximum 1.0 for a binary attribute);
* entropy gain  = obfuscated - real   (positive means more uncertain);
* probability gain = real - obfuscated (signed; negative when starting from
  the negative cluster and moving up toward 0.5);
* per-image entropies are averaged (mean of entropies, not entropy of the
  mean probability);
* the adversary decision threshold is 0.5.
"""

from __future__ import annotations

import csv
import dataclasses
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from . import train as train_mod
from .config import ExperimentConfig
from .data import AttrImageDataset, balanced_eval_split
from .modelio import AdversaryBundle, ModelBundle, dataset_tensors, images_to_tensor

__all__ = [
    "shannon_entropy",
    "InversionReport",
    "UncertaintyReport",
    "eval_inversion",
    "eval_uncertainty",
    "tradeoff_sweep",
    "fid_from_features",
    "compute_fid",
    "export_scatter",
    "export_histograms",
    "INVERSION_HEADER",
    "UNCERTAINTY_HEADER",
    "TRADEOFF_HEADER",
    "SCATTER_HEADER",
    "HIST_HEADER",
]

INVERSION_HEADER = ("attribute", "kind", "tpr", "tnr", "acc", "n")
UNCERTAINTY_HEADER = (
    "attribute",
    "direction",
    "n",
    "entropy_real",
    "entropy_ours",
    "entropy_gain",
    "prob_real",
    "prob_ours",
    "prob_gain",
)
TRADEOFF_HEADER = ("delta2", "privacy", "utility")
SCATTER_HEADER = ("kind", "p_before", "p_after")
HIST_HEADER = ("bin_left", "bin_right", "original", "inverted", "obfuscated")

HIST_BINS = 20


def shannon_entropy(p):
    """Binary Shannon entropy in bits, with 0*log(0) = 0.

    Accepts scalars or arrays; raises ValueError outside [0, 1].
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.size and (np.min(arr) < 0.0 or np.max(arr) > 1.0):
        raise ValueError(f"probabilities must lie in [0, 1], got range "
                         f"[{np.min(arr)}, {np.max(arr)}]")
    out = np.zeros_like(arr)
    for q in (arr, 1.0 - arr):
        mask = q > 0.0
        out = out - np.where(mask, q * np.log2(np.where(mask, q, 1.0)), 0.0)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.isscalar(p) or getattr(p, "ndim", 1) == 0 else out


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _probs(adversary: AdversaryBundle, x: torch.Tensor) -> np.ndarray:
    return adversary.predict_proba(x).numpy().astype(np.float64)


def _check_adversary(adversary: AdversaryBundle, ds: AttrImageDataset) -> None:
    names = getattr(adversary, "attr_names", ())
    if names and tuple(names) != tuple(ds.attr_names):
        raise ValueError(
            f"adversary was trained on attributes {tuple(names)}, "
            f"dataset has {tuple(ds.attr_names)}"
        )


def _attr_indices(ds: AttrImageDataset, attrs: Sequence[str] | None) -> list[tuple[str, int]]:
    wanted = list(attrs) if attrs else list(ds.attr_names)
    pairs = []
    for name in wanted:
        if name not in ds.attr_names:
            raise ValueError(f"unknown attribute {name!r}; dataset has {tuple(ds.attr_names)}")
        pairs.append((name, ds.attr_names.index(name)))
    return pairs


def _balanced(ds: AttrImageDataset, idx: int, max_eval: int | None,
              warnings_out: list[str]) -> AttrImageDataset:
    col = ds.labels[:, idx]
    n_pos = int((col == 1.0).sum())
    n_neg = int((col == 0.0).sum())
    if n_pos != n_neg:
        warnings_out.append(
            f"attribute {ds.attr_names[idx]!r}: unbalanced eval data "
            f"({n_pos} positive / {n_neg} negative); truncated to "
            f"{min(n_pos, n_neg)} per class"
        )
    return balanced_eval_split(ds, idx, max_n=max_eval if max_eval else 10**9)


def _rates(p: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """(TPR, TNR, accuracy) of thresholded probabilities against 0/1 labels."""
    pred = p >= 0.5
    pos = y >= 0.5
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("rate computation needs both classes present")
    tp = int((pred & pos).sum())
    tn = int((~pred & ~pos).sum())
    return tp / n_pos, tn / n_neg, (tp + tn) / len(y)


def _one_attr_edit(y: torch.Tensor, idx: int) -> tuple[torch.Tensor, torch.Tensor]:
    """(mask, values) requesting the opposite of each image's original label."""
    mask = torch.zeros_like(y)
    mask[:, idx] = 1.0
    values = torch.zeros_like(y)
    values[:, idx] = 1.0 - y[:, idx]
    return mask, values


@dataclass
class InversionReport:
    """Per-attribute adversary rates on real and attribute-inverted images."""

    rows: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def acc(self, attribute: str, kind: str) -> float:
        for row in self.rows:
            if row["attribute"] == attribute and row["kind"] == kind:
                return row["acc"]
        raise KeyError(f"no row for ({attribute!r}, {kind!r})")

    def attributes(self) -> list[str]:
        seen: list[str] = []
        for row in self.rows:
            if row["attribute"] not in seen:
                seen.append(row["attribute"])
        return seen

    def to_csv(self, path: str | Path) -> Path:
        return _write_csv(
            Path(path), INVERSION_HEADER,
            [[r[k] for k in INVERSION_HEADER] for r in self.rows],
        )


@dataclass
class UncertaintyReport:
    """Entropy/probability table per attribute and obfuscation direction."""

    rows: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def mean_entropy_gain(self) -> float:
        return float(np.mean([r["entropy_gain"] for r in self.rows]))

    def mean_prob_shift_toward_half(self) -> float:
        """Average decrease of |p - 0.5| from real to obfuscated."""
        shifts = [
            abs(r["prob_real"] - 0.5) - abs(r["prob_ours"] - 0.5) for r in self.rows
        ]
        return float(np.mean(shifts))

    def to_csv(self, path: str | Path) -> Path:
        return _write_csv(
            Path(path), UNCERTAINTY_HEADER,
            [[r[k] for k in UNCERTAINTY_HEADER] for r in self.rows],
        )


def eval_inversion(
    model,
    adversary: AdversaryBundle,
    ds: AttrImageDataset,
    attrs: Sequence[str] | None = None,
    max_eval: int | None = None,
    out_path: str | Path | None = None,
) -> InversionReport:
    """Score the held-out adversary on attribute-inverted images.

    For each attribute the eval split is balanced, every image gets the
    opposite code value requested (positives -> absent, negatives -> present),
    and TPR/TNR/accuracy are computed against the ORIGINAL labels, next to a
    real-image credibility row. Lower inverted accuracy means better
    suppression. `model` needs an ``invert(x, mask, values)`` method.
    """
    _check_adversary(adversary, ds)
    report = InversionReport()
    for name, idx in _attr_indices(ds, attrs):
        sub = _balanced(ds, idx, max_eval, report.warnings)
        x, y = dataset_tensors(sub)
        yj = y[:, idx].numpy().astype(np.float64)
        tpr, tnr, acc = _rates(_probs(adversary, x)[:, idx], yj)
        report.rows.append(
            {"attribute": name, "kind": "real", "tpr": tpr, "tnr": tnr,
             "acc": acc, "n": len(sub)}
        )
        mask, values = _one_attr_edit(y, idx)
        x_bar = model.invert(x, mask, values)
        tpr, tnr, acc = _rates(_probs(adversary, x_bar)[:, idx], yj)
        report.rows.append(
            {"attribute": name, "kind": "inverted", "tpr": tpr, "tnr": tnr,
             "acc": acc, "n": len(sub)}
        )
    if out_path is not None:
        report.to_csv(out_path)
    return report


def eval_uncertainty(
    model,
    mixup_adversary: AdversaryBundle,
    ds: AttrImageDataset,
    attrs: Sequence[str] | None = None,
    max_eval: int | None = None,
    out_path: str | Path | None = None,
) -> UncertaintyReport:
    """Mean entropy/probability before and after pixel-mixed obfuscation.

    Each attribute is obfuscated on its balanced eval split and the rows are
    reported per original-label direction: ``pos_to_uncertain`` starts from
    the positive cluster, ``neg_to_uncertain`` from the negative one.
    ``model`` needs an ``obfuscate(x, target) -> (x', lam)`` method.
    """
    _check_adversary(mixup_adversary, ds)
    report = UncertaintyReport()
    for name, idx in _attr_indices(ds, attrs):
        sub = _balanced(ds, idx, max_eval, report.warnings)
        x, y = dataset_tensors(sub)
        yj = y[:, idx].numpy()
        p_real = _probs(mixup_adversary, x)[:, idx]
        x_prime, _ = model.obfuscate(x, idx)
        p_ours = _probs(mixup_adversary, x_prime)[:, idx]
        for direction, sel in (
            ("pos_to_uncertain", yj >= 0.5),
            ("neg_to_uncertain", yj < 0.5),
        ):
            h_real = float(shannon_entropy(p_real[sel]).mean())
            h_ours = float(shannon_entropy(p_ours[sel]).mean())
            m_real = float(p_real[sel].mean())
            m_ours = float(p_ours[sel].mean())
            report.rows.append(
                {
                    "attribute": name,
                    "direction": direction,
                    "n": int(sel.sum()),
                    "entropy_real": h_real,
                    "entropy_ours": h_ours,
                    "entropy_gain": h_ours - h_real,
                    "prob_real": m_real,
                    "prob_ours": m_ours,
                    "prob_gain": m_real - m_ours,
                }
            )
    if out_path is not None:
        report.to_csv(out_path)
    return report


def _privacy_utility(
    bundle, adversary: AdversaryBundle, ds: AttrImageDataset, max_eval: int | None
) -> tuple[float, float]:
    """Mean target-attribute accuracy (privacy, lower better) and mean
    non-target accuracy (utility, higher better) across inversion targets."""
    target_accs: list[float] = []
    other_accs: list[float] = []
    scratch: list[str] = []
    for _, idx in _attr_indices(ds, None):
        sub = _balanced(ds, idx, max_eval, scratch)
        x, y = dataset_tensors(sub)
        mask, values = _one_attr_edit(y, idx)
        p = _probs(adversary, bundle.invert(x, mask, values))
        labels = y.numpy().astype(np.float64)
        for k in range(ds.n_attrs):
            acc = float(((p[:, k] >= 0.5) == (labels[:, k] >= 0.5)).mean())
            (target_accs if k == idx else other_accs).append(acc)
    return float(np.mean(target_accs)), float(np.mean(other_accs))


def tradeoff_sweep(
    cfg: ExperimentConfig,
    delta2_values: Sequence[float],
    ds_train: AttrImageDataset,
    out_dir: str | Path,
    ds_eval: AttrImageDataset | None = None,
    adversary: AdversaryBundle | None = None,
    max_eval: int | None = None,
) -> list[dict]:
    """Train one first-stage model per utility margin and tabulate the
    privacy/utility pair for each; writes ``tradeoff.csv`` under ``out_dir``.

    Privacy is the adversary's mean accuracy on the inverted target attribute
    (lower is better); utility is its mean accuracy on the untouched
    attributes of the same outputs (higher is better). No monotonicity is
    asserted — training is stochastic.
    """
    values = [float(v) for v in delta2_values]
    if not values:
        raise ValueError("need at least one delta2 value")
    if any(v < 0 for v in values):
        raise ValueError(f"delta2 values must be >= 0, got {values}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds_eval = ds_eval if ds_eval is not None else ds_train
    if adversary is None:
        res = train_mod.train_adversary(ds_train, False, cfg, out_dir / "adversary")
        adversary = AdversaryBundle.load(res.checkpoint_path)
    _check_adversary(adversary, ds_eval)

    rows: list[dict] = []
    for v in values:
        run_dir = out_dir / f"delta2_{v:g}"
        cfg_v = dataclasses.replace(cfg, delta2=v)
        result = train_mod.train_stage1(cfg_v, ds_train, run_dir)
        bundle = ModelBundle.load(result.checkpoint_path)
        privacy, utility = _privacy_utility(bundle, adversary, ds_eval, max_eval)
        rows.append({"delta2": v, "privacy": privacy, "utility": utility})
    _write_csv(out_dir / "tradeoff.csv", TRADEOFF_HEADER,
               [[r[k] for k in TRADEOFF_HEADER] for r in rows])
    return rows


def fid_from_features(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Frechet distance between two Gaussian fits.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the matrix
    square root taken through an eigendecomposition of the symmetrized
    product; negative eigenvalues (rank-deficient covariances) are clipped at
    zero with a warning.
    """
    fa = np.asarray(feats_a, dtype=np.float64)
    fb = np.asarray(feats_b, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise ValueError(f"feature sets must be 2-d with equal widths, "
                         f"got {fa.shape} and {fb.shape}")
    dim = fa.shape[1]
    for label, f in (("first", fa), ("second", fb)):
        if f.shape[0] < dim + 1:
            raise ValueError(
                f"{label} feature set has {f.shape[0]} samples; need at least "
                f"dim+1 = {dim + 1} for a well-defined covariance"
            )
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    sig_a = np.cov(fa, rowvar=False)
    sig_b = np.cov(fb, rowvar=False)

    wa, va = np.linalg.eigh(sig_a)
    tol = max(1e-12, 1e-10 * float(np.max(np.abs(wa), initial=1.0)))
    clipped = wa < -tol
    sqrt_a = (va * np.sqrt(np.clip(wa, 0.0, None))) @ va.T
    wm = np.linalg.eigvalsh(sqrt_a @ sig_b @ sqrt_a)
    clipped_m = wm < -max(1e-12, 1e-10 * float(np.max(np.abs(wm), initial=1.0)))
    if clipped.any() or clipped_m.any():
        warnings.warn(
            "rank-deficient covariance: negative eigenvalues clipped at 0 "
            "in the Frechet distance", RuntimeWarning, stacklevel=2,
        )
    trace_sqrt = float(np.sqrt(np.clip(wm, 0.0, None)).sum())
    diff = mu_a - mu_b
    fid = float(diff @ diff + np.trace(sig_a) + np.trace(sig_b) - 2.0 * trace_sqrt)
    return max(fid, 0.0)


def compute_fid(
    images_a,
    images_b,
    features: AdversaryBundle | Callable[[torch.Tensor], torch.Tensor],
    batch: int = 256,
) -> float:
    """Frechet distance between two image sets under a feature extractor.

    ``features`` is either a trained adversary bundle (its penultimate pooled
    layer is the embedding) or any callable mapping an image tensor to a
    (B, D) feature tensor.
    """
    fn = features.features if isinstance(features, AdversaryBundle) else features

    def extract(images) -> np.ndarray:
        x = images_to_tensor(images) if isinstance(images, np.ndarray) else images
        with torch.no_grad():
            out = [fn(x[i : i + batch]) for i in range(0, len(x), batch)]
        return torch.cat(out).numpy().astype(np.float64)

    return fid_from_features(extract(images_a), extract(images_b))


def _safe_name(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name)


def export_scatter(
    model,
    mixup_adversary: AdversaryBundle,
    ds: AttrImageDataset,
    out_dir: str | Path,
    attrs: Sequence[str] | None = None,
    max_eval: int | None = None,
) -> list[Path]:
    """Per-attribute, per-cluster (p_before, p_after) scatter data.

    Writes ``scatter_<attr>_<cluster>.csv`` with one ``point`` row per eval
    image plus ``mean`` and ``std`` summary rows.
    """
    _check_adversary(mixup_adversary, ds)
    out_dir = Path(out_dir)
    files: list[Path] = []
    scratch: list[str] = []
    for name, idx in _attr_indices(ds, attrs):
        sub = _balanced(ds, idx, max_eval, scratch)
        x, y = dataset_tensors(sub)
        yj = y[:, idx].numpy()
        p_before = _probs(mixup_adversary, x)[:, idx]
        x_prime, _ = model.obfuscate(x, idx)
        p_after = _probs(mixup_adversary, x_prime)[:, idx]
        for cluster, sel in (("pos", yj >= 0.5), ("neg", yj < 0.5)):
            rows = [["point", b, a] for b, a in zip(p_before[sel], p_after[sel])]
            rows.append(["mean", float(p_before[sel].mean()), float(p_after[sel].mean())])
            rows.append(["std", float(p_before[sel].std()), float(p_after[sel].std())])
            files.append(_write_csv(
                out_dir / f"scatter_{_safe_name(name)}_{cluster}.csv",
                SCATTER_HEADER, rows,
            ))
    return files


def export_histograms(
    model,
    mixup_adversary: AdversaryBundle,
    ds: AttrImageDataset,
    out_dir: str | Path,
    attrs: Sequence[str] | None = None,
    max_eval: int | None = None,
    bins: int = HIST_BINS,
) -> list[Path]:
    """Binned prediction and entropy counts for original / inverted /
    obfuscated variants of each eval image.

    Writes ``hist_<attr>_<cluster>_<kind>.csv`` (kind in {prob, entropy})
    with ``bins`` equal-width bins covering [0, 1] exactly; the three count
    columns each sum to the cluster size.
    """
    _check_adversary(mixup_adversary, ds)
    out_dir = Path(out_dir)
    edges = np.linspace(0.0, 1.0, bins + 1)
    files: list[Path] = []
    scratch: list[str] = []
    for name, idx in _attr_indices(ds, attrs):
        sub = _balanced(ds, idx, max_eval, scratch)
        x, y = dataset_tensors(sub)
        yj = y[:, idx].numpy()
        mask, values = _one_attr_edit(y, idx)
        variants = {
            "original": x,
            "inverted": model.invert(x, mask, values),
            "obfuscated": model.obfuscate(x, idx)[0],
        }
        probs = {k: _probs(mixup_adversary, v)[:, idx] for k, v in variants.items()}
        for cluster, sel in (("pos", yj >= 0.5), ("neg", yj < 0.5)):
            for kind in ("prob", "entropy"):
                series = {}
                for variant, p in probs.items():
                    vals = p[sel] if kind == "prob" else shannon_entropy(p[sel])
                    series[variant] = np.histogram(vals, bins=edges)[0]
                rows = [
                    [edges[i], edges[i + 1],
                     int(series["original"][i]), int(series["inverted"][i]),
                     int(series["obfuscated"][i])]
                    for i in range(bins)
                ]
                files.append(_write_csv(
                    out_dir / f"hist_{_safe_name(name)}_{cluster}_{kind}.csv",
                    HIST_HEADER, rows,
                ))
    return files
