"""Dataset generation, loading and splitting.

Images are numpy float32 arrays of shape (N, H, W, C) with pixel values in a
declared ``value_range`` (default [-1, 1]). Labels are float32 arrays of shape
(N, n_attrs) with entries in {0, 1}. Datasets are immutable after construction
and safe to share across workers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "LabeledPoints2D",
    "AttrImageDataset",
    "PreprocessSpec",
    "AttrFileParseError",
    "SHAPE_ATTRIBUTES",
    "gen_two_gaussians",
    "gen_shape_attr",
    "load_attr_dataset",
    "save_attr_dataset",
    "balanced_eval_split",
    "to_uint8",
    "from_uint8",
    "preprocess_pil",
]


class AttrFileParseError(ValueError):
    """Malformed attribute list file; message names the offending line."""


@dataclass(frozen=True)
class LabeledPoints2D:
    """2-D points with binary cluster labels."""

    points: np.ndarray  # (N, 2) float32
    labels: np.ndarray  # (N,) uint8 in {0, 1}

    def __post_init__(self):
        if len(self.points) != len(self.labels):
            raise ValueError("points and labels must have equal length")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        self.points.flags.writeable = False
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class PreprocessSpec:
    """Center-crop side, output side, and normalized pixel interval."""

    crop: int = 178
    resize: int = 128
    value_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        lo, hi = self.value_range
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError(f"value_range must be finite with min < max, got {self.value_range}")
        if self.crop <= 0 or self.resize <= 0:
            raise ValueError("crop and resize must be positive")


@dataclass(frozen=True)
class AttrImageDataset:
    """Images plus per-image binary attribute labels."""

    images: np.ndarray  # (N, H, W, C) float32 in value_range
    labels: np.ndarray  # (N, n_attrs) float32 in {0, 1}
    attr_names: tuple[str, ...]
    split: str = "train"  # "train" | "eval"
    value_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, H, W, C), got shape {self.images.shape}")
        if self.labels.shape != (len(self.images), len(self.attr_names)):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match "
                f"{len(self.images)} images x {len(self.attr_names)} attributes"
            )
        if len(self.attr_names) < 1:
            raise ValueError("at least one attribute required")
        if self.split not in ("train", "eval"):
            raise ValueError(f"split must be 'train' or 'eval', got {self.split!r}")
        self.validate()
        self.images.flags.writeable = False
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return len(self.images)

    @property
    def n_attrs(self) -> int:
        return len(self.attr_names)

    @property
    def image_size(self) -> int:
        return self.images.shape[1]

    def validate(self) -> None:
        """Assert label and pixel invariants; raises ValueError on violation."""
        if self.labels.size and not np.isin(self.labels, (0.0, 1.0)).all():
            raise ValueError("label entries must be exactly 0 or 1")
        lo, hi = self.value_range
        if self.images.size and (self.images.min() < lo - 1e-6 or self.images.max() > hi + 1e-6):
            raise ValueError(
                f"pixel values [{self.images.min():.4f}, {self.images.max():.4f}] "
                f"exceed value_range {self.value_range}"
            )

    def subset(self, indices: np.ndarray, split: str | None = None) -> "AttrImageDataset":
        return AttrImageDataset(
            images=self.images[indices].copy(),
            labels=self.labels[indices].copy(),
            attr_names=self.attr_names,
            split=split or self.split,
            value_range=self.value_range,
        )


def gen_two_gaussians(
    n_per_class: int,
    mean_pos: tuple[float, float] = (2.0, 0.0),
    mean_neg: tuple[float, float] = (-2.0, 0.0),
    std: float = 0.5,
    seed: int = 0,
) -> LabeledPoints2D:
    """Draw ``n_per_class`` points per cluster from two isotropic Gaussians.

    Label 1 marks the ``mean_pos`` cluster. Deterministic for a fixed seed.
    """
    if n_per_class <= 0:
        raise ValueError(f"n_per_class must be positive, got {n_per_class}")
    if std <= 0:
        raise ValueError(f"std must be positive, got {std}")
    mean_pos = np.asarray(mean_pos, dtype=np.float64)
    mean_neg = np.asarray(mean_neg, dtype=np.float64)
    if np.allclose(mean_pos, mean_neg):
        raise ValueError("cluster means must be distinct")

    rng = np.random.default_rng(seed)
    pos = rng.normal(loc=mean_pos, scale=std, size=(n_per_class, 2))
    neg = rng.normal(loc=mean_neg, scale=std, size=(n_per_class, 2))
    points = np.concatenate([pos, neg]).astype(np.float32)
    labels = np.concatenate(
        [np.ones(n_per_class, dtype=np.uint8), np.zeros(n_per_class, dtype=np.uint8)]
    )
    return LabeledPoints2D(points=points, labels=labels)


# Procedural binary attributes for the synthetic shape dataset. Each entry
# controls one visual property of a rendered scene (a filled disc on a plain
# background); attributes are sampled independently of one another.
SHAPE_ATTRIBUTES = (
    "warm_fill",   # disc is red-dominant (1) vs blue-dominant (0)
    "bright_bg",   # background light (1) vs dark (0)
    "outlined",    # white ring around the disc (1) vs none (0)
    "corner_mark", # small white square near the top-left corner (1) vs none (0)
    "large_shape", # disc radius large (1) vs small (0)
    "second_dot",  # small grey dot near the bottom-right corner (1) vs none (0)
)


def _render_shape_image(size: int, attrs: dict[str, int], rng: np.random.Generator) -> np.ndarray:
    """Render one uint8 RGB image realizing the given attribute bits."""
    s = size / 32.0  # geometry scales with resolution
    img = np.zeros((size, size, 3), dtype=np.float64)

    bg = rng.uniform(170, 210) if attrs.get("bright_bg", 1) else rng.uniform(45, 85)
    img[:] = bg

    cx = size / 2 + rng.uniform(-3, 3) * s
    cy = size / 2 + rng.uniform(-3, 3) * s
    if "large_shape" in attrs:
        radius = rng.uniform(10, 12) * s if attrs["large_shape"] else rng.uniform(5.5, 7.5) * s
    else:
        radius = rng.uniform(7, 10) * s

    if attrs.get("warm_fill", 1):
        fill = np.array([rng.uniform(185, 225), rng.uniform(40, 80), rng.uniform(40, 80)])
    else:
        fill = np.array([rng.uniform(40, 80), rng.uniform(40, 80), rng.uniform(185, 225)])

    yy, xx = np.mgrid[0:size, 0:size]
    dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    img[dist <= radius] = fill

    if attrs.get("outlined", 0):
        ring = (dist > radius) & (dist <= radius + 2.0 * s)
        img[ring] = 240.0

    if attrs.get("corner_mark", 0):
        mw = max(3, int(round(4 * s)))
        ox = int(round(2 * s + rng.uniform(0, 2) * s))
        oy = int(round(2 * s + rng.uniform(0, 2) * s))
        img[oy : oy + mw, ox : ox + mw] = 235.0

    if attrs.get("second_dot", 0):
        dr = 2.5 * s
        dx = size - 1 - (4 * s + rng.uniform(0, 2) * s)
        dy = size - 1 - (4 * s + rng.uniform(0, 2) * s)
        img[(xx - dx) ** 2 + (yy - dy) ** 2 <= dr**2] = 128.0

    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def _u8_to_range(u8: np.ndarray, value_range: tuple[float, float]) -> np.ndarray:
    lo, hi = value_range
    return (u8.astype(np.float32) / 255.0) * (hi - lo) + lo


def _range_to_u8(img: np.ndarray, value_range: tuple[float, float]) -> np.ndarray:
    lo, hi = value_range
    return np.clip(np.round((img - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(u8: np.ndarray, value_range: tuple[float, float] = (-1.0, 1.0)) -> np.ndarray:
    """uint8 pixels -> float32 pixels in ``value_range``."""
    return _u8_to_range(np.asarray(u8, dtype=np.uint8), value_range)


def to_uint8(img: np.ndarray, value_range: tuple[float, float] = (-1.0, 1.0)) -> np.ndarray:
    """Float pixels in ``value_range`` -> uint8, rounding and clipping."""
    return _range_to_u8(np.asarray(img, dtype=np.float32), value_range)


def preprocess_pil(img: Image.Image, spec: PreprocessSpec) -> np.ndarray:
    """Center-crop, resize and normalize one PIL image to (H, W, 3) float32."""
    return _preprocess_image(img, spec)


def gen_shape_attr(
    n: int,
    attr_names: list[str] | tuple[str, ...] = SHAPE_ATTRIBUTES[:4],
    size: int = 32,
    seed: int = 0,
    value_range: tuple[float, float] = (-1.0, 1.0),
    split: str = "train",
) -> AttrImageDataset:
    """Generate ``n`` procedural attribute images.

    Attribute bits are sampled independently per attribute with an exactly
    balanced marginal (half positives, shuffled), so empirical positive rates
    stay within [0.45, 0.55] for any n >= 2. Pixels are quantized to the uint8
    grid before normalization, so datasets round-trip losslessly through
    :func:`save_attr_dataset` / :func:`load_attr_dataset`.
    """
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if size < 16:
        raise ValueError(f"size must be >= 16, got {size}")
    attr_names = tuple(attr_names)
    if len(attr_names) < 2:
        raise ValueError("at least two attributes required")
    unknown = [a for a in attr_names if a not in SHAPE_ATTRIBUTES]
    if unknown:
        raise ValueError(f"unknown shape attributes {unknown}; available: {list(SHAPE_ATTRIBUTES)}")

    rng = np.random.default_rng(seed)
    labels = np.empty((n, len(attr_names)), dtype=np.float32)
    for j in range(len(attr_names)):
        col = np.zeros(n, dtype=np.float32)
        col[: n // 2] = 1.0
        rng.shuffle(col)
        labels[:, j] = col

    images = np.empty((n, size, size, 3), dtype=np.float32)
    for i in range(n):
        bits = {name: int(labels[i, j]) for j, name in enumerate(attr_names)}
        images[i] = _u8_to_range(_render_shape_image(size, bits, rng), value_range)

    return AttrImageDataset(
        images=images, labels=labels, attr_names=attr_names, split=split, value_range=value_range
    )


def _parse_attr_file(attr_file: str | os.PathLike) -> tuple[list[str], list[tuple[str, list[float]]]]:
    """Parse a CelebA-style attribute list: header of names, then one row per
    image of ``filename v1 .. vN`` with values +-1. A leading line holding a
    single integer count (as in the original CelebA release) is skipped."""
    lines = Path(attr_file).read_text().splitlines()
    rows: list[tuple[str, list[float]]] = []
    idx = 0
    if lines and len(lines[0].split()) == 1 and lines[0].strip().lstrip("-").isdigit():
        idx = 1  # optional count line
    if idx >= len(lines) or not lines[idx].split():
        raise AttrFileParseError(f"{attr_file}: missing header line with attribute names")
    names = lines[idx].split()
    idx += 1
    for lineno in range(idx, len(lines)):
        parts = lines[lineno].split()
        if not parts:
            continue
        if len(parts) != len(names) + 1:
            raise AttrFileParseError(
                f"{attr_file}: line {lineno + 1}: expected filename plus "
                f"{len(names)} values, got {len(parts)} fields"
            )
        vals = []
        for tok in parts[1:]:
            if tok not in ("1", "-1", "+1"):
                raise AttrFileParseError(
                    f"{attr_file}: line {lineno + 1}: attribute value must be +-1, got {tok!r}"
                )
            vals.append(1.0 if tok in ("1", "+1") else 0.0)
        rows.append((parts[0], vals))
    return names, rows


def _preprocess_image(img: Image.Image, spec: PreprocessSpec) -> np.ndarray:
    w, h = img.size
    left = (w - spec.crop) // 2
    top = (h - spec.crop) // 2
    img = img.crop((left, top, left + spec.crop, top + spec.crop))
    if spec.resize != spec.crop:
        img = img.resize((spec.resize, spec.resize), Image.BILINEAR)
    arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return _u8_to_range(arr, spec.value_range)


def load_attr_dataset(
    image_dir: str | os.PathLike,
    attr_file: str | os.PathLike,
    spec: PreprocessSpec,
    attr_subset: list[str] | None = None,
    split: str = "train",
    limit: int | None = None,
) -> AttrImageDataset:
    """Load a CelebA-format dataset: the -1/+1 encoding maps to {0, 1}, images
    are center-cropped to ``spec.crop`` then resized to ``spec.resize``.

    ``attr_subset`` restricts and orders the attribute columns; ``limit`` caps
    the number of rows read (rows are taken in file order).
    """
    names, rows = _parse_attr_file(attr_file)
    if attr_subset is not None:
        missing = [a for a in attr_subset if a not in names]
        if missing:
            raise ValueError(f"attributes {missing} not present in {attr_file}")
        cols = [names.index(a) for a in attr_subset]
        out_names = tuple(attr_subset)
    else:
        cols = list(range(len(names)))
        out_names = tuple(names)

    if limit is not None:
        rows = rows[:limit]

    image_dir = Path(image_dir)
    images = np.empty((len(rows), spec.resize, spec.resize, 3), dtype=np.float32)
    labels = np.empty((len(rows), len(cols)), dtype=np.float32)
    for i, (fname, vals) in enumerate(rows):
        path = image_dir / fname
        if not path.exists():
            raise FileNotFoundError(f"image file not found: {path}")
        with Image.open(path) as img:
            images[i] = _preprocess_image(img, spec)
        labels[i] = [vals[j] for j in cols]

    return AttrImageDataset(
        images=images,
        labels=labels,
        attr_names=out_names,
        split=split,
        value_range=spec.value_range,
    )


def save_attr_dataset(ds: AttrImageDataset, out_dir: str | os.PathLike) -> Path:
    """Export to a directory of lossless PNGs plus a CelebA-format attribute
    list (count line, header, then one -1/+1 row per image)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    img_dir = out_dir / "images"
    img_dir.mkdir(exist_ok=True)

    lines = [str(len(ds)), " ".join(ds.attr_names)]
    for i in range(len(ds)):
        fname = f"{i:06d}.png"
        u8 = _range_to_u8(ds.images[i], ds.value_range)
        Image.fromarray(u8).save(img_dir / fname)
        vals = " ".join("1" if v else "-1" for v in ds.labels[i])
        lines.append(f"{fname} {vals}")
    attr_path = out_dir / "attrs.txt"
    attr_path.write_text("\n".join(lines) + "\n")
    return attr_path


def balanced_eval_split(ds: AttrImageDataset, attr_index: int, max_n: int = 10**9) -> AttrImageDataset:
    """Equal-count positive/negative subset for one attribute, truncating the
    majority class; at most ``max_n`` items total, in original dataset order."""
    if not (0 <= attr_index < ds.n_attrs):
        raise ValueError(f"attr_index {attr_index} out of range for {ds.n_attrs} attributes")
    if max_n <= 0:
        raise ValueError(f"max_n must be positive, got {max_n}")
    col = ds.labels[:, attr_index]
    pos = np.flatnonzero(col == 1.0)
    neg = np.flatnonzero(col == 0.0)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError(
            f"attribute {ds.attr_names[attr_index]!r} has an empty class "
            f"({len(pos)} positives, {len(neg)} negatives)"
        )
    k = min(len(pos), len(neg), max_n // 2)
    if k == 0:
        raise ValueError(f"max_n={max_n} too small for a balanced split")
    keep = np.sort(np.concatenate([pos[:k], neg[:k]]))
    return ds.subset(keep, split="eval")
