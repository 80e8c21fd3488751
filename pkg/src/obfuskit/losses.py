"""Objective terms for both training stages and the label-editing sampler.

All probability-based losses use natural-log binary cross entropy with inputs
clamped to [EPS, 1-EPS]; uncertainty *metrics* elsewhere use base-2 entropy.
Hinge terms apply to batch-mean quantities, so a margin of 0 reduces them to
the raw loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .nets import DiscOutput, LatentPair

__all__ = [
    "EPS",
    "EditPlan",
    "Margins",
    "LossWeights",
    "bce",
    "loss_rec",
    "loss_cclf",
    "edit_code",
    "loss_bi",
    "loss_attr_disc",
    "loss_attr_real",
    "loss_adv",
    "loss_reg",
    "loss_util",
    "loss_generator_total",
    "loss_entropy_stage2",
]

EPS = 1e-7


@dataclass(frozen=True)
class Margins:
    """Hinge tolerances: content distortion (delta1, L1 units), inverted-image
    non-target attribute loss (delta2), reconstruction attribute loss (delta3)."""

    delta1: float = 0.05
    delta2: float = 0.1
    delta3: float = 0.0

    def __post_init__(self):
        if self.delta1 < 0 or self.delta2 < 0 or self.delta3 < 0:
            raise ValueError("margins must be non-negative")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0  # utility term
    lambda2: float = 1.0  # content regularization term

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class EditPlan:
    """Per-sample record of a code edit: mask of edited positions, replacement
    bits, edit counts, and the resulting modified code and label."""

    m: torch.Tensor       # (B, n_attrs) in {0, 1}; 1 = position edited
    s: torch.Tensor       # (B, n_attrs); replacement bits, meaningful where m = 1
    n_edit: torch.Tensor  # (B,) number of edited positions per sample
    c_bar: torch.Tensor   # (B, n_attrs) modified code
    y_bar: torch.Tensor   # (B, n_attrs) modified label


def _bce_raw(p: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = p.clamp(EPS, 1.0 - EPS)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p))


def bce(p: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Elementwise natural-log binary cross entropy with probability clamping."""
    return _bce_raw(p, target)


def loss_rec(x_hat: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Mean absolute reconstruction error over all pixels and batch."""
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch: {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    return (x_hat - x).abs().mean()


def loss_cclf(c: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean squared error between code and ground-truth attribute bits."""
    if c.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(c.shape)} vs {tuple(y.shape)}")
    return ((c - y) ** 2).mean()


def edit_code(
    c: torch.Tensor,
    y: torch.Tensor,
    rng: np.random.Generator,
    mask: torch.Tensor | None = None,
    values: torch.Tensor | None = None,
) -> EditPlan:
    """Sample a code edit, or apply an explicit one.

    Training mode (mask is None): the edit count per sample is uniform on
    {1, .., max(1, n_attrs // 2)}, edited positions are chosen uniformly
    without replacement, and replacement bits are fair coin flips. Test-time
    callers may instead supply an explicit (mask, values) pair, in which case
    values at masked positions are written verbatim.

    Unedited positions always keep both their code and label.
    """
    if c.shape != y.shape or c.dim() != 2:
        raise ValueError(f"c and y must both be (B, n_attrs), got {tuple(c.shape)} / {tuple(y.shape)}")
    b, n_attrs = c.shape

    if mask is not None:
        if values is None:
            raise ValueError("explicit edits require both mask and values")
        if mask.shape != c.shape or values.shape != c.shape:
            raise ValueError("mask and values must match the code shape")
        m = mask.to(c.dtype)
        s = values.to(c.dtype)
    else:
        k_max = max(1, n_attrs // 2)
        n_edit = rng.integers(1, k_max + 1, size=b)
        m_np = np.zeros((b, n_attrs), dtype=np.float32)
        for i in range(b):
            pos = rng.choice(n_attrs, size=n_edit[i], replace=False)
            m_np[i, pos] = 1.0
        s_np = rng.integers(0, 2, size=(b, n_attrs)).astype(np.float32)
        m = torch.from_numpy(m_np).to(c.device, c.dtype)
        s = torch.from_numpy(s_np).to(c.device, c.dtype)

    c_bar = c * (1.0 - m) + s * m
    y_bar = y * (1.0 - m) + s * m
    return EditPlan(m=m, s=s, n_edit=m.sum(dim=1), c_bar=c_bar, y_bar=y_bar)


def _resolve_mask(mask: torch.Tensor | None, shape: torch.Size, device, dtype) -> torch.Tensor:
    if mask is None:
        return torch.ones(shape, device=device, dtype=dtype)
    mask = mask.to(device=device, dtype=dtype)
    if mask.dim() == 1:
        mask = mask.unsqueeze(0).expand(shape[0], -1)
    if mask.shape != shape:
        raise ValueError(f"mask shape {tuple(mask.shape)} incompatible with {tuple(shape)}")
    return mask


def loss_bi(
    disc: DiscOutput,
    y_org: torch.Tensor,
    y_tar: torch.Tensor,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Bi-directional attribute loss: per attribute, originally-positive
    samples are judged by the positive-direction head and originally-negative
    ones by the negative-direction head, against (possibly soft) targets.
    The mean runs over unmasked attribute entries across the batch; an empty
    mask yields 0."""
    p_pos, p_neg = disc.p_pos, disc.p_neg
    if y_org.shape != p_pos.shape or y_tar.shape != p_pos.shape:
        raise ValueError(
            f"labels must match head shape {tuple(p_pos.shape)}, "
            f"got {tuple(y_org.shape)} / {tuple(y_tar.shape)}"
        )
    if ((y_tar < 0) | (y_tar > 1)).any():
        raise ValueError("targets must lie in [0, 1]")
    mask = _resolve_mask(mask, p_pos.shape, p_pos.device, p_pos.dtype)
    total = mask.sum()
    if total == 0:
        return p_pos.new_zeros(())
    per_entry = y_org * _bce_raw(p_pos, y_tar) + (1.0 - y_org) * _bce_raw(p_neg, y_tar)
    return (per_entry * mask).sum() / total


def loss_attr_disc(disc_on_generated: DiscOutput, y: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """Discriminator-side term on generated images: predict the ORIGINAL
    labels, restricted to edited positions."""
    return loss_bi(disc_on_generated, y, y, mask=m)


def loss_attr_real(disc_on_real: DiscOutput, y: torch.Tensor) -> torch.Tensor:
    """Discriminator-side term on real images: BOTH direction heads act as
    plain classifiers of the true labels (mean BCE over batch and attributes,
    averaged across the two heads; a shared single head reduces this to
    ordinary classification).

    Grounding each head on both classes is what pins its decision boundary to
    the data. A head trained only on the samples its direction gate selects
    sees a single constant target, and its cheapest response is an
    input-independent saturated output -- at which point generated images
    stop receiving any pixel gradient through the attribute game.
    """
    p_pos, p_neg = disc_on_real.p_pos, disc_on_real.p_neg
    if y.shape != p_pos.shape:
        raise ValueError(f"labels must match head shape {tuple(p_pos.shape)}, got {tuple(y.shape)}")
    return 0.5 * (_bce_raw(p_pos, y).mean() + _bce_raw(p_neg, y).mean())


def loss_adv(
    realism_real: torch.Tensor | None,
    realism_fake: torch.Tensor,
    side: str,
) -> torch.Tensor:
    """Image adversarial value function on post-sigmoid realism scores.

    The discriminator minimizes -(log D(x) + log(1 - D(x_fake))); the
    generator uses the non-saturating form -log D(x_fake). Scores are clamped
    away from {0, 1} before the log.
    """
    if side not in ("discriminator", "generator"):
        raise ValueError(f"side must be 'discriminator' or 'generator', got {side!r}")
    fake = realism_fake.clamp(EPS, 1.0 - EPS)
    if side == "generator":
        return -torch.log(fake).mean()
    if realism_real is None:
        raise ValueError("discriminator side requires real scores")
    real = realism_real.clamp(EPS, 1.0 - EPS)
    return -(torch.log(real).mean() + torch.log(1.0 - fake).mean())


def loss_reg(e_xbar: LatentPair, e_x: LatentPair, delta1: float) -> torch.Tensor:
    """Hinge on the per-element mean L1 distance between the full encodings
    (content features, skip features, and code) of generated and original
    images; distances within delta1 are free."""
    a, b = e_xbar.flat_content(), e_x.flat_content()
    if a.shape != b.shape:
        raise ValueError(f"encoding shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    dist = (a - b).abs().mean()
    return (dist - delta1).clamp(min=0.0)


def loss_util(
    disc_xbar: DiscOutput,
    disc_xhat: DiscOutput,
    y: torch.Tensor,
    m: torch.Tensor,
    delta2: float,
    delta3: float,
) -> torch.Tensor:
    """Utility preservation: non-edited attributes of the inverted image and
    all attributes of the reconstruction must still classify as y, each hinged
    at its margin."""
    keep = loss_bi(disc_xbar, y, y, mask=1.0 - m)
    rec = loss_bi(disc_xhat, y, y)
    return (keep - delta2).clamp(min=0.0) + (rec - delta3).clamp(min=0.0)


def loss_generator_total(
    rec: torch.Tensor,
    cclf: torch.Tensor,
    bi: torch.Tensor,
    adv: torch.Tensor,
    util: torch.Tensor,
    reg: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Weighted sum of the six generator-side terms."""
    return rec + cclf + bi + adv + weights.lambda1 * util + weights.lambda2 * reg


def loss_entropy_stage2(
    disc_xprime: DiscOutput,
    y_org: torch.Tensor,
    target_attr: int,
) -> torch.Tensor:
    """Uncertainty objective for the mixed image: realism (non-saturating
    generator form) plus a soft-0.5 cross entropy at the target attribute
    averaged over both attribute heads, with original labels enforced at all
    non-target positions."""
    n_attrs = disc_xprime.p_pos.shape[1]
    if not (0 <= target_attr < n_attrs):
        raise ValueError(f"target_attr {target_attr} out of range for {n_attrs} attributes")
    p_pos_t = disc_xprime.p_pos[:, target_attr]
    p_neg_t = disc_xprime.p_neg[:, target_attr]
    half = torch.full_like(p_pos_t, 0.5)
    target_term = 0.5 * (_bce_raw(p_pos_t, half) + _bce_raw(p_neg_t, half)).mean()

    keep_mask = torch.ones_like(y_org)
    keep_mask[:, target_attr] = 0.0
    nontarget_term = loss_bi(disc_xprime, y_org, y_org, mask=keep_mask)

    adv_term = (
        loss_adv(None, disc_xprime.realism, side="generator")
        if disc_xprime.realism is not None
        else disc_xprime.p_pos.new_zeros(())
    )
    return adv_term + target_term + nontarget_term
