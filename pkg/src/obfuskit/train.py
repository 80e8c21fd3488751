"""Training loops: Stage I (attribute inversion), Stage II (uncertainty-
maximizing mixing), the held-out adversary (plain and mixup), and the
two-Gaussian toy experiment with its translated-points / confidence-grid
exports.

All stochasticity (batch sampling, code edits, mixup draws) flows through one
numpy Generator whose state is checkpointed, so fixed-seed reruns and resumed
runs follow identical trajectories on a single-threaded CPU setup.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import DISCRIMINATOR_MODES, ExperimentConfig
from .data import AttrImageDataset, LabeledPoints2D
from .losses import (
    edit_code,
    loss_adv,
    loss_attr_disc,
    loss_attr_real,
    loss_bi,
    loss_cclf,
    loss_entropy_stage2,
    loss_generator_total,
    loss_rec,
    loss_reg,
    loss_util,
)
from .nets import build_adversary, build_mixer, build_stage1_nets, mix_images

__all__ = [
    "Stage1Result",
    "Stage2Result",
    "AdversaryResult",
    "ToyModeResult",
    "ToyReport",
    "lr_factor",
    "train_stage1",
    "train_stage2",
    "train_adversary",
    "train_toy",
    "toy_default_config",
]


def lr_factor(step: int, total: int, start_frac: float = 0.5) -> float:
    """Learning-rate multiplier: 1.0 through the first start_frac of training,
    then linear to exactly 0 at step == total."""
    if total < 1:
        raise ValueError("total must be >= 1")
    knee = start_frac * total
    if step <= knee:
        return 1.0
    return max(0.0, (total - step) / (total - knee))


def _set_lr(opt: torch.optim.Optimizer, base: float, factor: float) -> None:
    for group in opt.param_groups:
        group["lr"] = base * factor


def _check_finite(terms: dict[str, torch.Tensor], iteration: int) -> None:
    for name, value in terms.items():
        if not torch.isfinite(value).all():
            raise RuntimeError(
                f"non-finite loss term {name!r} at iteration {iteration}: {float(value)}"
            )


class _CurveWriter:
    """Accumulates (iteration, term, value) rows and writes one CSV."""

    def __init__(self, path: Path):
        self.path = path
        self.rows: list[tuple[int, str, float]] = []

    def record(self, iteration: int, terms: dict[str, torch.Tensor]) -> None:
        for name, value in terms.items():
            self.rows.append((iteration, name, float(value.detach())))

    def flush(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "term", "value"])
            for it, name, value in self.rows:
                writer.writerow([it, name, repr(value)])


def _dataset_tensors(ds: AttrImageDataset) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.from_numpy(np.ascontiguousarray(ds.images.transpose(0, 3, 1, 2)))
    y = torch.from_numpy(ds.labels.copy())
    return x, y


def _validate_dataset(cfg: ExperimentConfig, ds: AttrImageDataset) -> None:
    if ds.image_size != cfg.image_size or ds.images.shape[3] != cfg.channels:
        raise ValueError(
            f"dataset geometry {ds.images.shape[1:]} does not match config "
            f"({cfg.image_size}, {cfg.image_size}, {cfg.channels})"
        )
    if ds.n_attrs != cfg.n_attrs:
        raise ValueError(f"dataset has {ds.n_attrs} attributes, config expects {cfg.n_attrs}")
    if ds.value_range != (cfg.value_low, cfg.value_high):
        raise ValueError(
            f"dataset value_range {ds.value_range} does not match config "
            f"({cfg.value_low}, {cfg.value_high})"
        )


@dataclass
class Stage1Result:
    encoder: torch.nn.Module
    decoder: torch.nn.Module
    disc: torch.nn.Module
    checkpoint_path: Path | None
    curve_path: Path
    final_terms: dict[str, float]


@dataclass
class Stage2Result:
    encoder: torch.nn.Module
    decoder: torch.nn.Module
    disc: torch.nn.Module
    mixer: torch.nn.Module
    checkpoint_path: Path
    curve_path: Path
    final_terms: dict[str, float]


@dataclass
class AdversaryResult:
    model: torch.nn.Module
    checkpoint_path: Path
    curve_path: Path
    final_terms: dict[str, float]


def _stage1_core(
    cfg: ExperimentConfig,
    x_all: torch.Tensor,
    y_all: torch.Tensor,
    out_dir: Path,
    curve_name: str,
    ckpt_name: str | None,
    resume: str | Path | None,
    attr_names: tuple[str, ...],
):
    """Shared Stage-I loop for the image and vector profiles."""
    netcfg = cfg.net_config()
    mode = cfg.discriminator_mode
    adversarial_update = mode != "d_attr"  # Eq.-10-style D updates on generated data
    enc, dec, disc = build_stage1_nets(netcfg, seed=cfg.seed, bidirectional=cfg.bidirectional)
    opt_g = torch.optim.Adam(
        list(enc.parameters()) + list(dec.parameters()),
        lr=cfg.lr_generator, betas=(cfg.beta1, cfg.beta2),
    )
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr_discriminator, betas=(cfg.beta1, cfg.beta2))
    rng = np.random.default_rng(cfg.seed)
    start = 0
    if resume is not None:
        ck = load_checkpoint(resume)
        ck.load_into({"encoder": enc, "decoder": dec, "disc": disc}, {"g": opt_g, "d": opt_d})
        rng = ck.make_rng()
        start = ck.step

    enc.train(), dec.train(), disc.train()
    curve = _CurveWriter(out_dir / curve_name)
    n = len(x_all)
    total = cfg.iters_stage1
    weights = cfg.weights()
    ckpt_path = (out_dir / ckpt_name) if ckpt_name else None

    def save(step):
        save_checkpoint(
            ckpt_path, step, cfg,
            modules={"encoder": enc, "decoder": dec, "disc": disc},
            optimizers={"g": opt_g, "d": opt_d},
            rng=rng,
            extra={"stage": 1, "attr_names": list(attr_names)},
        )

    final_terms: dict[str, float] = {}
    for it in range(start, total):
        fac = lr_factor(it, total, cfg.decay_start_frac)
        _set_lr(opt_g, cfg.lr_generator, fac)
        _set_lr(opt_d, cfg.lr_discriminator, fac)

        x = y = plan = None
        d_terms: dict[str, torch.Tensor] = {}
        for _ in range(cfg.d_steps):
            idx = torch.as_tensor(rng.integers(0, n, size=cfg.batch_size), dtype=torch.long)
            x, y = x_all[idx], y_all[idx]
            with torch.no_grad():
                lat = enc(x)
                plan = edit_code(lat.c, y, rng)
                x_bar = dec(x, lat, plan.c_bar)
            d_real = disc(x)
            d_fake = disc(x_bar)
            d_terms = {"d_attr_real": loss_attr_real(d_real, y)}
            if adversarial_update:
                d_terms["d_attr_fake"] = loss_attr_disc(d_fake, y, plan.m)
            if d_real.realism is not None:
                d_terms["d_adv"] = loss_adv(d_real.realism, d_fake.realism, "discriminator")
            l_d = sum(d_terms.values())
            d_terms["d_total"] = l_d
            _check_finite(d_terms, it)
            opt_d.zero_grad()
            l_d.backward()
            opt_d.step()

        # generator step on the last drawn batch, reusing its edit pattern
        lat = enc(x)
        plan_g = edit_code(lat.c, y, rng, mask=plan.m, values=plan.s)
        x_hat = dec(x, lat, lat.c)
        x_bar = dec(x, lat, plan_g.c_bar)
        d_bar = disc(x_bar)
        d_hat = disc(x_hat)
        lat_bar = enc(x_bar)
        g_terms = {
            "rec": loss_rec(x_hat, x),
            "cclf": loss_cclf(lat.c, y),
            "bi": loss_bi(d_bar, y, plan_g.y_bar),
            "adv": loss_adv(None, d_bar.realism, "generator")
            if d_bar.realism is not None else x.new_zeros(()),
            "util": loss_util(d_bar, d_hat, y, plan_g.m, cfg.delta2, cfg.delta3),
            "reg": loss_reg(lat_bar, lat, cfg.delta1),
        }
        l_g = loss_generator_total(
            g_terms["rec"], g_terms["cclf"], g_terms["bi"], g_terms["adv"],
            g_terms["util"], g_terms["reg"], weights,
        )
        g_terms["g_total"] = l_g
        _check_finite(g_terms, it)
        opt_g.zero_grad()
        l_g.backward()
        opt_g.step()

        step = it + 1
        if step % cfg.log_every == 0 or step == total:
            record = {**d_terms, **g_terms}
            curve.record(step, record)
            final_terms = {k: float(v.detach()) for k, v in record.items()}
        if ckpt_path and cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step < total:
            save(step)

    curve.flush()
    enc.eval(), dec.eval(), disc.eval()
    if ckpt_path:
        save(total)
    return enc, dec, disc, ckpt_path, curve.path, final_terms


def train_stage1(
    cfg: ExperimentConfig,
    ds: AttrImageDataset,
    out_dir: str | Path,
    resume: str | Path | None = None,
) -> Stage1Result:
    """Alternating D/G optimization of the inversion model on image data."""
    cfg = cfg.effective()
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    _validate_dataset(cfg, ds)
    out_dir = Path(out_dir)
    x_all, y_all = _dataset_tensors(ds)
    enc, dec, disc, ckpt, curve, final = _stage1_core(
        cfg, x_all, y_all, out_dir,
        curve_name="stage1_curve.csv", ckpt_name="stage1.pt",
        resume=resume, attr_names=ds.attr_names,
    )
    return Stage1Result(enc, dec, disc, ckpt, curve, final)


def train_stage2(
    cfg: ExperimentConfig,
    ds: AttrImageDataset,
    stage1_ckpt: str | Path,
    out_dir: str | Path,
) -> Stage2Result:
    """Train the mixing network against the frozen Stage-I model."""
    cfg = cfg.effective()
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    _validate_dataset(cfg, ds)
    out_dir = Path(out_dir)
    ck = load_checkpoint(stage1_ckpt)
    for key in ("profile", "image_size", "channels", "n_attrs", "base_width", "depth",
                "shared_trunk", "spectral_norm", "discriminator_mode"):
        if getattr(ck.config, key) != getattr(cfg, key):
            raise ValueError(
                f"config key {key!r} ({getattr(cfg, key)!r}) does not match "
                f"stage-1 checkpoint ({getattr(ck.config, key)!r})"
            )
    netcfg = cfg.net_config()
    enc, dec, disc = build_stage1_nets(netcfg, seed=cfg.seed, bidirectional=cfg.bidirectional)
    ck.load_into({"encoder": enc, "decoder": dec, "disc": disc})
    for m in (enc, dec, disc):
        m.eval()
        m.requires_grad_(False)

    mixer = build_mixer(netcfg, seed=cfg.seed)
    opt = torch.optim.Adam(mixer.parameters(), lr=cfg.lr_generator, betas=(cfg.beta1, cfg.beta2))
    opt_d = None
    if cfg.stage2_update_disc:
        disc.requires_grad_(True)
        opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr_discriminator, betas=(cfg.beta1, cfg.beta2))

    rng = np.random.default_rng(cfg.seed)
    x_all, y_all = _dataset_tensors(ds)
    n = len(x_all)
    total = cfg.iters_stage2
    curve = _CurveWriter(out_dir / "stage2_curve.csv")
    mixer.train()
    final_terms: dict[str, float] = {}

    for it in range(total):
        fac = lr_factor(it, total, cfg.decay_start_frac)
        _set_lr(opt, cfg.lr_generator, fac)
        if opt_d is not None:
            _set_lr(opt_d, cfg.lr_discriminator, fac)
        idx = torch.as_tensor(rng.integers(0, n, size=cfg.batch_size), dtype=torch.long)
        x, y = x_all[idx], y_all[idx]
        t = int(rng.integers(0, cfg.n_attrs))
        with torch.no_grad():
            lat = enc(x)
            mask = torch.zeros_like(y)
            mask[:, t] = 1.0
            plan = edit_code(lat.c, y, rng, mask=mask, values=1.0 - y)
            x_bar = dec(x, lat, plan.c_bar)

        if opt_d is not None:
            with torch.no_grad():
                lam_d = mixer(x, x_bar, lat.c, plan.c_bar)
                x_prime_d = mix_images(x, x_bar, lam_d)
            dr, df = disc(x), disc(x_prime_d)
            if dr.realism is not None:
                l_d = loss_adv(dr.realism, df.realism, "discriminator")
                _check_finite({"d_adv": l_d}, it)
                opt_d.zero_grad()
                l_d.backward()
                opt_d.step()

        lam = mixer(x, x_bar, lat.c, plan.c_bar)
        x_prime = mix_images(x, x_bar, lam)
        d_out = disc(x_prime)
        l_ent = loss_entropy_stage2(d_out, y, t)
        terms = {"ent": l_ent, "lam_mean": lam.mean()}
        _check_finite(terms, it)
        opt.zero_grad()
        l_ent.backward()
        opt.step()

        step = it + 1
        if step % cfg.log_every == 0 or step == total:
            curve.record(step, terms)
            final_terms = {k: float(v.detach()) for k, v in terms.items()}

    curve.flush()
    mixer.eval()
    ckpt_path = out_dir / "stage2.pt"
    save_checkpoint(
        ckpt_path, total, cfg,
        modules={"encoder": enc, "decoder": dec, "disc": disc, "mixer": mixer},
        optimizers={"mix": opt},
        rng=rng,
        extra={"stage": 2, "attr_names": list(ck.extra.get("attr_names", ds.attr_names))},
    )
    return Stage2Result(enc, dec, disc, mixer, ckpt_path, curve.path, final_terms)


def train_adversary(
    ds: AttrImageDataset,
    mixup: bool,
    cfg: ExperimentConfig,
    out_dir: str | Path,
) -> AdversaryResult:
    """Train the held-out attribute classifier, optionally with input/label
    mixing to temper over-confidence."""
    cfg = cfg.effective()
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    _validate_dataset(cfg, ds)
    out_dir = Path(out_dir)
    model = build_adversary(cfg.net_config(), seed=cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.adversary_lr)
    rng = np.random.default_rng(cfg.seed)
    x_all, y_all = _dataset_tensors(ds)
    n = len(x_all)
    total = cfg.adversary_iters
    name = "adversary_mixup" if mixup else "adversary"
    curve = _CurveWriter(out_dir / f"{name}_curve.csv")
    model.train()
    final_terms: dict[str, float] = {}

    for it in range(total):
        _set_lr(opt, cfg.adversary_lr, lr_factor(it, total, cfg.decay_start_frac))
        idx = torch.as_tensor(rng.integers(0, n, size=cfg.batch_size), dtype=torch.long)
        x, y = x_all[idx], y_all[idx]
        if mixup:
            lam = torch.as_tensor(
                rng.beta(cfg.mixup_alpha, cfg.mixup_alpha, size=cfg.batch_size), dtype=torch.float32
            )
            perm = torch.as_tensor(rng.permutation(cfg.batch_size), dtype=torch.long)
            lam_x = lam.view(-1, 1, 1, 1)
            x = lam_x * x + (1.0 - lam_x) * x[perm]
            y = lam.view(-1, 1) * y + (1.0 - lam.view(-1, 1)) * y[perm]
        loss = F.binary_cross_entropy_with_logits(model(x), y)
        terms = {"bce": loss}
        _check_finite(terms, it)
        opt.zero_grad()
        loss.backward()
        opt.step()
        step = it + 1
        if step % cfg.log_every == 0 or step == total:
            curve.record(step, terms)
            final_terms = {k: float(v.detach()) for k, v in terms.items()}

    curve.flush()
    model.mark_trained()
    model.eval()
    ckpt_path = out_dir / f"{name}.pt"
    save_checkpoint(
        ckpt_path, total, cfg,
        modules={"adversary": model},
        optimizers={"adv": opt},
        rng=rng,
        extra={"adversary": True, "mixup": mixup, "attr_names": list(ds.attr_names)},
    )
    return AdversaryResult(model, ckpt_path, curve.path, final_terms)


# ---------------------------------------------------------------------------
# two-Gaussian toy experiment


def toy_default_config(seed: int = 0) -> ExperimentConfig:
    """Vector-profile config sized to finish all three modes well inside the
    five-minute single-core budget."""
    return ExperimentConfig(
        profile="vector",
        n_attrs=1,
        base_width=32,
        vector_dim=2,
        vector_u_dim=8,
        lr_generator=1e-3,
        lr_discriminator=5e-3,
        batch_size=64,
        iters_stage1=1200,
        delta1=0.5,
        delta2=0.1,
        delta3=0.0,
        lambda1=1.0,
        lambda2=1.0,
        seed=seed,
        log_every=100,
    )


@dataclass
class ToyModeResult:
    mode: str
    success_pos_to_neg: float  # fraction of label-1 points translated into the negative cluster
    success_neg_to_pos: float
    mean_axial_distance: float  # |projection on the inter-mean axis| of translated points


@dataclass
class ToyReport:
    modes: dict[str, ToyModeResult]
    out_dir: Path
    files: list[Path]

    def axial_ratio(self, mode: str, reference: str = "bidirectional") -> float:
        return self.modes[mode].mean_axial_distance / self.modes[reference].mean_axial_distance


def _toy_grid(points: np.ndarray, res: int) -> tuple[np.ndarray, torch.Tensor]:
    lo = points.min(axis=0) - 0.5
    hi = points.max(axis=0) + 0.5
    xs = np.linspace(lo[0], hi[0], res)
    ys = np.linspace(lo[1], hi[1], res)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float32)
    return grid, torch.from_numpy(grid)


def _write_grid_csv(path: Path, grid: np.ndarray, p: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "p"])
        for (gx, gy), v in zip(grid, p):
            writer.writerow([repr(float(gx)), repr(float(gy)), repr(float(v))])


def train_toy(
    cfg: ExperimentConfig,
    toy: LabeledPoints2D,
    out_dir: str | Path,
    mean_pos: tuple[float, float] = (2.0, 0.0),
    mean_neg: tuple[float, float] = (-2.0, 0.0),
    modes: tuple[str, ...] = DISCRIMINATOR_MODES,
    grid_res: int = 50,
) -> ToyReport:
    """Train the 2-D translator under each discriminator mode; export
    translated points, discriminator confidence grids, and a summary table.

    mean_pos/mean_neg describe the generating distribution and drive the
    analytic nearest-mean oracle (equal isotropic covariances, equal priors).
    """
    cfg = cfg.effective()
    if len(toy) == 0:
        raise ValueError("toy dataset is empty")
    labels = toy.labels.astype(np.float32)
    if labels.min() == labels.max():
        raise ValueError("toy dataset must contain both classes")
    for mode in modes:
        if mode not in DISCRIMINATOR_MODES:
            raise ValueError(f"unknown discriminator mode {mode!r}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    x_all = torch.from_numpy(toy.points.astype(np.float32))
    y_all = torch.from_numpy(labels).view(-1, 1)
    mp = np.asarray(mean_pos, dtype=np.float64)
    mn = np.asarray(mean_neg, dtype=np.float64)
    axis = (mp - mn) / np.linalg.norm(mp - mn)
    midpoint = (mp + mn) / 2.0

    files: list[Path] = []
    results: dict[str, ToyModeResult] = {}
    point_rows: list[list] = []
    attr_names = ("cluster",)

    for mode in modes:
        mode_slug = mode.lower()
        mcfg = dataclasses.replace(
            cfg, profile="vector", n_attrs=1, discriminator_mode=mode, checkpoint_every=0
        )
        enc, dec, disc, _, curve_path, _ = _stage1_core(
            mcfg, x_all, y_all, out_dir,
            curve_name=f"toy_curve_{mode_slug}.csv", ckpt_name=None,
            resume=None, attr_names=attr_names,
        )
        files.append(curve_path)
        with torch.no_grad():
            lat = enc(x_all)
            plan = edit_code(
                lat.c, y_all, np.random.default_rng(0),
                mask=torch.ones_like(y_all), values=1.0 - y_all,
            )
            trans = dec(x_all, lat, plan.c_bar).numpy()

        # nearest-mean oracle under equal isotropic covariance
        d_pos = ((trans - mp) ** 2).sum(axis=1)
        d_neg = ((trans - mn) ** 2).sum(axis=1)
        oracle = (d_pos < d_neg).astype(np.float32)  # 1 = classified into positive cluster
        target = 1.0 - labels
        reached = oracle == target
        pos_mask = labels == 1.0
        success_pn = float(reached[pos_mask].mean())
        success_np = float(reached[~pos_mask].mean())
        axial = float(np.abs((trans - midpoint) @ axis).mean())
        results[mode] = ToyModeResult(mode, success_pn, success_np, axial)

        for i in range(len(trans)):
            direction = "pos_to_neg" if pos_mask[i] else "neg_to_pos"
            point_rows.append([
                mode, direction,
                repr(float(toy.points[i, 0])), repr(float(toy.points[i, 1])),
                repr(float(trans[i, 0])), repr(float(trans[i, 1])),
                int(reached[i]),
            ])

        grid_np, grid_t = _toy_grid(toy.points, grid_res)
        with torch.no_grad():
            d_out = disc(grid_t)
        if mode == "bidirectional":
            for head, p in (("dpos", d_out.p_pos), ("dneg", d_out.p_neg)):
                path = out_dir / f"confidence_grid_{head}.csv"
                _write_grid_csv(path, grid_np, p.numpy().ravel())
                files.append(path)
        elif mode == "d_attr":
            path = out_dir / "confidence_grid_dattr.csv"
            _write_grid_csv(path, grid_np, d_out.p_pos.numpy().ravel())
            files.append(path)

    points_path = out_dir / "translated_points.csv"
    with open(points_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "direction", "x", "y", "tx", "ty", "oracle_target_reached"])
        writer.writerows(point_rows)
    files.append(points_path)

    summary_path = out_dir / "toy_summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "success_pos_to_neg", "success_neg_to_pos", "mean_axial_distance"])
        for mode in modes:
            r = results[mode]
            writer.writerow([
                mode, repr(r.success_pos_to_neg), repr(r.success_neg_to_pos),
                repr(r.mean_axial_distance),
            ])
    files.append(summary_path)

    return ToyReport(modes=results, out_dir=out_dir, files=files)
