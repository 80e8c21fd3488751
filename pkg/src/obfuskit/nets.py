"""Network architectures: encoder, residual decoder, bi-directional
discriminator with realism head, pixel-wise mixing network, and the held-out
adversary classifier.

Two profiles share the same contracts: ``image`` (convolutional, U-net style
encoder/decoder) and ``vector`` (MLPs over 2-D points for the toy world,
without a realism head).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import spectral_norm

__all__ = [
    "NetConfig",
    "LatentPair",
    "DiscOutput",
    "Encoder",
    "Decoder",
    "BiDiscriminator",
    "MixNet",
    "AdversaryNet",
    "mix_images",
    "build_stage1_nets",
    "build_mixer",
    "build_adversary",
    "count_params",
]


@dataclass
class NetConfig:
    image_size: int = 32
    channels: int = 3
    n_attrs: int = 4
    base_width: int = 32
    depth: int = 3
    spectral_norm_on_discriminators: bool = True
    shared_trunk: bool = True
    profile: str = "image"  # "image" | "vector"
    value_range: tuple[float, float] = (-1.0, 1.0)
    adversary_width: int = 32
    adversary_blocks: int = 4
    mixer_width: int = 32
    vector_dim: int = 2
    vector_u_dim: int = 8

    def __post_init__(self):
        if self.profile not in ("image", "vector"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.profile == "image":
            if self.image_size < 16 or self.image_size & (self.image_size - 1):
                raise ValueError(f"image_size must be a power of two >= 16, got {self.image_size}")
            if self.depth < 2:
                raise ValueError(f"depth must be >= 2, got {self.depth}")
            if 2**self.depth > self.image_size:
                raise ValueError("depth too large for image_size")
        if self.n_attrs < 1:
            raise ValueError("n_attrs must be >= 1")


@dataclass
class LatentPair:
    """Disentangled encoding: content features ``u`` (with encoder skip
    features, also attribute-independent content) and sensitive code ``c``."""

    u: torch.Tensor  # (B, C', h, w) image profile | (B, D) vector profile
    c: torch.Tensor  # (B, n_attrs)
    skips: tuple[torch.Tensor, ...] = ()

    def flat_content(self) -> torch.Tensor:
        """All encoder outputs flattened per sample, for encoding distances."""
        parts = [self.u.flatten(1)] + [s.flatten(1) for s in self.skips] + [self.c]
        return torch.cat(parts, dim=1)


@dataclass
class DiscOutput:
    p_pos: torch.Tensor  # (B, n_attrs) in [0, 1]
    p_neg: torch.Tensor  # (B, n_attrs) in [0, 1]
    realism: torch.Tensor | None = None  # (B,) in [0, 1]


def _check_image(x: torch.Tensor, cfg: NetConfig, name: str = "x") -> None:
    if x.dim() != 4 or x.shape[1] != cfg.channels or x.shape[2] != cfg.image_size or x.shape[3] != cfg.image_size:
        raise ValueError(
            f"{name} must have shape (B, {cfg.channels}, {cfg.image_size}, {cfg.image_size}), "
            f"got {tuple(x.shape)}"
        )


def _widths(cfg: NetConfig) -> list[int]:
    return [min(cfg.base_width * 2**i, cfg.base_width * 8) for i in range(cfg.depth)]


class Encoder(nn.Module):
    """Contracting path producing content features, skip features, and an
    unconstrained code vector read off globally pooled bottleneck features."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.profile == "vector":
            h = cfg.base_width
            self.body = nn.Sequential(
                nn.Linear(cfg.vector_dim, h), nn.LeakyReLU(0.2),
                nn.Linear(h, h), nn.LeakyReLU(0.2),
            )
            self.u_head = nn.Linear(h, cfg.vector_u_dim)
            self.c_head = nn.Linear(h, cfg.n_attrs)
            return
        widths = _widths(cfg)
        blocks = []
        in_ch = cfg.channels
        for i, w in enumerate(widths):
            layers = [nn.Conv2d(in_ch, w, 4, stride=2, padding=1)]
            if i > 0:
                layers.append(nn.InstanceNorm2d(w, affine=True))
            layers.append(nn.LeakyReLU(0.2))
            blocks.append(nn.Sequential(*layers))
            in_ch = w
        self.blocks = nn.ModuleList(blocks)
        self.c_head = nn.Linear(widths[-1], cfg.n_attrs)

    def forward(self, x: torch.Tensor) -> LatentPair:
        if self.cfg.profile == "vector":
            if x.dim() != 2 or x.shape[1] != self.cfg.vector_dim:
                raise ValueError(f"expected (B, {self.cfg.vector_dim}) points, got {tuple(x.shape)}")
            h = self.body(x)
            return LatentPair(u=self.u_head(h), c=self.c_head(h))
        _check_image(x, self.cfg)
        skips = []
        h = x
        for block in self.blocks[:-1]:
            h = block(h)
            skips.append(h)
        u = self.blocks[-1](h)
        c = self.c_head(u.mean(dim=(2, 3)))
        return LatentPair(u=u, c=c, skips=tuple(skips))

    encode = forward


def _broadcast_code(code: torch.Tensor, h: int, w: int) -> torch.Tensor:
    return code.view(code.shape[0], -1, 1, 1).expand(-1, -1, h, w)


class Decoder(nn.Module):
    """Residual decoder: the edited code is broadcast spatially, concatenated
    with the bottleneck features, and upsampled back through skip concats. The
    final layer is zero-initialized so the residual path starts at identity."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.profile == "vector":
            h = cfg.base_width
            self.body = nn.Sequential(
                nn.Linear(cfg.vector_u_dim + cfg.n_attrs, h), nn.LeakyReLU(0.2),
                nn.Linear(h, h), nn.LeakyReLU(0.2),
            )
            self.final = nn.Linear(h, cfg.vector_dim)
            nn.init.zeros_(self.final.weight)
            nn.init.zeros_(self.final.bias)
            return
        widths = _widths(cfg)
        top = widths[-1]
        self.fuse = nn.Sequential(
            nn.Conv2d(top + cfg.n_attrs, top, 3, padding=1),
            nn.InstanceNorm2d(top, affine=True),
            nn.ReLU(),
        )
        ups = []
        for i in range(cfg.depth - 1, 0, -1):
            in_ch = widths[i] + widths[i - 1]  # skip concat
            ups.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, widths[i - 1], 3, padding=1),
                    nn.InstanceNorm2d(widths[i - 1], affine=True),
                    nn.ReLU(),
                )
            )
        self.ups = nn.ModuleList(ups)
        self.head = nn.Sequential(
            nn.Conv2d(widths[0], cfg.base_width, 3, padding=1),
            nn.InstanceNorm2d(cfg.base_width, affine=True),
            nn.ReLU(),
        )
        self.final = nn.Conv2d(cfg.base_width, cfg.channels, 3, padding=1)
        nn.init.zeros_(self.final.weight)
        nn.init.zeros_(self.final.bias)

    def residual(self, latent: LatentPair, code: torch.Tensor) -> torch.Tensor:
        if code.dim() != 2 or code.shape[1] != self.cfg.n_attrs:
            raise ValueError(f"code must be (B, {self.cfg.n_attrs}), got {tuple(code.shape)}")
        if self.cfg.profile == "vector":
            return self.final(self.body(torch.cat([latent.u, code], dim=1)))
        u = latent.u
        h = self.fuse(torch.cat([u, _broadcast_code(code, u.shape[2], u.shape[3])], dim=1))
        for up, skip in zip(self.ups, reversed(latent.skips)):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = up(torch.cat([h, skip], dim=1))
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        return self.final(self.head(h))

    def forward(self, x: torch.Tensor, latent: LatentPair, code: torch.Tensor) -> torch.Tensor:
        res = self.residual(latent, code)
        if res.shape != x.shape:
            raise ValueError(f"residual shape {tuple(res.shape)} does not match input {tuple(x.shape)}")
        out = x + res
        if self.cfg.profile == "image":
            out = out.clamp(*self.cfg.value_range)
        return out

    decode = forward


class BiDiscriminator(nn.Module):
    """Attribute heads plus realism head over a convolutional trunk.

    With ``bidirectional=True`` there are separate positive-to-negative and
    negative-to-positive judges; otherwise a single attribute classifier is
    exposed through both output slots, so downstream gating reduces to plain
    classification. The single-classifier baseline is a conventional
    (non-spectral-normalized) classifier path regardless of the config flag —
    the Lipschitz constraint belongs to the adversarial recipe, not to the
    plain-classifier baseline it is compared against. The realism path always
    honors the flag. The vector profile has no realism head.
    """

    def __init__(self, cfg: NetConfig, bidirectional: bool = True):
        super().__init__()
        self.cfg = cfg
        self.bidirectional = bidirectional
        sn = spectral_norm if cfg.spectral_norm_on_discriminators else (lambda m: m)
        sn_attr = sn if bidirectional else (lambda m: m)

        if cfg.profile == "vector":
            h = cfg.base_width

            def make_trunk():
                return nn.Sequential(
                    sn_attr(nn.Linear(cfg.vector_dim, h)), nn.LeakyReLU(0.2),
                    sn_attr(nn.Linear(h, h)), nn.LeakyReLU(0.2),
                )

            # no realism head in the vector profile, so at most pos/neg trunks
            n_vec = 1 if (cfg.shared_trunk or not bidirectional) else 2
            self.trunks = nn.ModuleList([make_trunk() for _ in range(n_vec)])
            self.head_pos = sn_attr(nn.Linear(h, cfg.n_attrs))
            self.head_neg = sn_attr(nn.Linear(h, cfg.n_attrs)) if bidirectional else None
            self.head_img = None
            return

        widths = _widths(cfg)

        def make_trunk(wrap):
            layers = []
            in_ch = cfg.channels
            for w in widths:
                layers += [wrap(nn.Conv2d(in_ch, w, 4, stride=2, padding=1)), nn.LeakyReLU(0.2)]
                in_ch = w
            return nn.Sequential(*layers)

        if cfg.shared_trunk:
            self.trunks = nn.ModuleList([make_trunk(sn)])
        elif bidirectional:
            self.trunks = nn.ModuleList([make_trunk(sn), make_trunk(sn), make_trunk(sn)])
        else:
            self.trunks = nn.ModuleList([make_trunk(sn_attr), make_trunk(sn)])
        top = widths[-1]
        # Adversarially updated attribute heads carry no bias: a bias term lets
        # a head drift toward an input-independent saturated output, which
        # starves the generator of pixel gradients.
        self.head_pos = sn_attr(nn.Linear(top, cfg.n_attrs, bias=not bidirectional))
        self.head_neg = sn_attr(nn.Linear(top, cfg.n_attrs, bias=False)) if bidirectional else None
        self.head_img = sn(nn.Conv2d(top, 1, 3, padding=1))

    def _features(self, x: torch.Tensor) -> list[torch.Tensor]:
        if len(self.trunks) == 1:
            f = self.trunks[0](x)
            return [f, f, f]
        if self.bidirectional:
            return [t(x) for t in self.trunks]
        f_attr = self.trunks[0](x)
        return [f_attr, f_attr, self.trunks[1](x)]

    def forward(self, x: torch.Tensor) -> DiscOutput:
        if self.cfg.profile == "vector":
            if x.dim() != 2 or x.shape[1] != self.cfg.vector_dim:
                raise ValueError(f"expected (B, {self.cfg.vector_dim}) points, got {tuple(x.shape)}")
            f_pos = self.trunks[0](x)
            f_neg = f_pos if len(self.trunks) == 1 else self.trunks[1](x)
            p_pos = torch.sigmoid(self.head_pos(f_pos))
            p_neg = torch.sigmoid(self.head_neg(f_neg)) if self.bidirectional else p_pos
            return DiscOutput(p_pos=p_pos, p_neg=p_neg, realism=None)
        _check_image(x, self.cfg)
        f_pos, f_neg, f_img = self._features(x)
        p_pos = torch.sigmoid(self.head_pos(f_pos.mean(dim=(2, 3))))
        p_neg = torch.sigmoid(self.head_neg(f_neg.mean(dim=(2, 3)))) if self.bidirectional else p_pos
        realism = torch.sigmoid(self.head_img(f_img).mean(dim=(1, 2, 3)))
        return DiscOutput(p_pos=p_pos, p_neg=p_neg, realism=realism)

    discriminate = forward


class _ResBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(ch, ch, 3, padding=1),
            nn.InstanceNorm2d(ch, affine=True),
            nn.ReLU(),
            nn.Conv2d(ch, ch, 3, padding=1),
            nn.InstanceNorm2d(ch, affine=True),
        )

    def forward(self, x):
        return x + self.body(x)


class MixNet(nn.Module):
    """Predict per-pixel interpolation coefficients in [0, 1]: both images and
    both codes (broadcast to spatial maps) are stacked as input channels and
    pushed through residual blocks and a 1x1 projection."""

    N_BLOCKS = 5

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.mixer_width
        in_ch = 2 * cfg.channels + 2 * cfg.n_attrs
        self.stem = nn.Sequential(
            nn.Conv2d(in_ch, w, 3, padding=1), nn.InstanceNorm2d(w, affine=True), nn.ReLU()
        )
        self.blocks = nn.Sequential(*[_ResBlock(w) for _ in range(self.N_BLOCKS)])
        self.head = nn.Conv2d(w, 1, 1)

    def forward(
        self, x: torch.Tensor, x_bar: torch.Tensor, c: torch.Tensor, c_bar: torch.Tensor
    ) -> torch.Tensor:
        _check_image(x, self.cfg)
        if x_bar.shape != x.shape:
            raise ValueError(f"x_bar shape {tuple(x_bar.shape)} does not match x {tuple(x.shape)}")
        for name, code in (("c", c), ("c_bar", c_bar)):
            if code.dim() != 2 or code.shape[1] != self.cfg.n_attrs:
                raise ValueError(f"{name} must be (B, {self.cfg.n_attrs}), got {tuple(code.shape)}")
        hgt, wid = x.shape[2], x.shape[3]
        inp = torch.cat(
            [x, x_bar, _broadcast_code(c, hgt, wid), _broadcast_code(c_bar, hgt, wid)], dim=1
        )
        lam = torch.sigmoid(self.head(self.blocks(self.stem(inp))))
        return lam.squeeze(1)

    mix_predict = forward


def mix_images(x: torch.Tensor, x_bar: torch.Tensor, lam: torch.Tensor) -> torch.Tensor:
    """Pixel-wise interpolation lam*x + (1-lam)*x_bar; lam is (B, H, W) shared
    across channels."""
    if x.shape != x_bar.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_bar.shape)}")
    if lam.shape != (x.shape[0], x.shape[2], x.shape[3]):
        raise ValueError(f"lam must be (B, H, W), got {tuple(lam.shape)}")
    lam = lam.unsqueeze(1)
    return lam * x + (1.0 - lam) * x_bar


class _AdvBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1),
            nn.InstanceNorm2d(out_ch, affine=True),
            nn.ReLU(),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.InstanceNorm2d(out_ch, affine=True),
        )
        self.short = (
            nn.Conv2d(in_ch, out_ch, 1, stride=stride) if (stride != 1 or in_ch != out_ch) else nn.Identity()
        )

    def forward(self, x):
        return F.relu(self.short(x) + self.body(x))


class AdversaryNet(nn.Module):
    """Held-out residual attribute classifier, trained independently of (and
    sized strictly larger than) the in-loop discriminators."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.adversary_width
        self.stem = nn.Sequential(nn.Conv2d(cfg.channels, w, 3, padding=1), nn.ReLU())
        blocks = []
        ch = w
        for i in range(cfg.adversary_blocks):
            out = min(ch * 2, w * 8) if i % 2 == 0 else ch
            stride = 2 if i % 2 == 0 else 1
            blocks.append(_AdvBlock(ch, out, stride=stride))
            ch = out
        self.blocks = nn.Sequential(*blocks)
        self.fc = nn.Linear(ch, cfg.n_attrs)
        self.register_buffer("trained_flag", torch.zeros((), dtype=torch.int64))

    @property
    def is_trained(self) -> bool:
        return bool(self.trained_flag.item())

    def mark_trained(self) -> None:
        self.trained_flag.fill_(1)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Penultimate pooled features (used as the FID embedding at desk scale)."""
        _check_image(x, self.cfg)
        return self.blocks(self.stem(x)).mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.features(x))

    def predict_proba(self, x: torch.Tensor) -> torch.Tensor:
        """Per-attribute sigmoid probabilities; requires a trained model."""
        if not self.is_trained:
            raise RuntimeError("adversary has not been trained; call train_adversary first")
        return torch.sigmoid(self.forward(x))

    adversary_predict = predict_proba


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def build_stage1_nets(cfg: NetConfig, seed: int = 0, bidirectional: bool = True):
    """Construct (encoder, decoder, discriminator) with deterministic init."""
    torch.manual_seed(seed)
    return Encoder(cfg), Decoder(cfg), BiDiscriminator(cfg, bidirectional=bidirectional)


def build_mixer(cfg: NetConfig, seed: int = 0) -> MixNet:
    torch.manual_seed(seed)
    return MixNet(cfg)


def build_adversary(cfg: NetConfig, seed: int = 0) -> AdversaryNet:
    torch.manual_seed(seed)
    return AdversaryNet(cfg)
