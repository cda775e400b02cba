"""Noiser layers: differentiable image distortions applied in pairs.

Every attack acts on ``(B, 3, H, W)`` YCrCb batches. The encoded and the cover
batch always receive the same realization (same window, mask or angle), and
the ground-truth message grid is calibrated to the resulting geometry.

Attack specs have a compact string form mirroring the usual table labels::

    none  crop:p=0.3  cropout:p=0.3  dropout:p=0.5  rotate:alpha=5
    gaussian:sigma=2  subsample420  resize:s=0.5,m=N  jpeg:q=50
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import msgcodec
from .jpeg import jpeg_approx

KINDS = ("none", "crop", "cropout", "dropout", "rotate", "gaussian", "subsample420", "resize", "jpeg")

DEFAULTS = {
    "crop": {"p": 0.3},
    "cropout": {"p": 0.3},
    "dropout": {"p": 0.5},
    "rotate": {"alpha": 5.0},
    "gaussian": {"sigma": 2.0},
    "resize": {"s": 0.5, "m": "N"},
    "jpeg": {"q": 50.0},
}

_PARAM_NAMES = {
    "crop": ("p",), "cropout": ("p",), "dropout": ("p",), "rotate": ("alpha",),
    "gaussian": ("sigma",), "resize": ("s", "m"), "jpeg": ("q",), "none": (), "subsample420": (),
}


class AttackParamError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    p: float | None = None
    alpha: float | None = None
    sigma: float | None = None
    s: float | None = None
    m: str | None = None
    q: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AttackParamError(f"unknown attack kind {self.kind!r}")
        for name, value in DEFAULTS.get(self.kind, {}).items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        if self.kind in ("crop", "cropout", "dropout") and not 0 < self.p <= 1:
            raise AttackParamError(f"p must be in (0, 1], got {self.p}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise AttackParamError(f"sigma must be positive, got {self.sigma}")
        if self.kind == "resize":
            if not 0 < self.s <= 1:
                raise AttackParamError(f"s must be in (0, 1], got {self.s}")
            if self.m not in ("N", "L"):
                raise AttackParamError(f"resize mode must be N or L, got {self.m!r}")
        if self.kind == "jpeg" and not 1 <= self.q <= 100:
            raise AttackParamError(f"q must be in [1, 100], got {self.q}")

    @classmethod
    def parse(cls, text: str) -> AttackSpec:
        kind, _, rest = text.strip().partition(":")
        kind = kind.strip().lower()
        if kind not in KINDS:
            raise AttackParamError(f"unknown attack kind {kind!r}")
        kwargs = {}
        for item in filter(None, (x.strip() for x in rest.split(","))):
            name, eq, value = item.partition("=")
            if not eq or name not in _PARAM_NAMES[kind]:
                raise AttackParamError(f"bad parameter {item!r} for {kind}")
            try:
                kwargs[name] = value.upper() if name == "m" else float(value)
            except ValueError as err:
                raise AttackParamError(f"bad value in {item!r}") from err
        return cls(kind, **kwargs)

    def __str__(self) -> str:
        names = _PARAM_NAMES[self.kind]
        if not names:
            return self.kind
        parts = [f"{n}={_fmt(getattr(self, n))}" for n in names]
        return f"{self.kind}:{','.join(parts)}"


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return f"{v:g}"


@dataclass
class AttackResult:
    encoded: torch.Tensor
    cover: torch.Tensor
    grid: torch.Tensor | None = None
    grid_mask: torch.Tensor | None = None
    meta: dict = field(default_factory=dict)


# -- individual transforms ---------------------------------------------------

def crop_window(H: int, W: int, p: float, rng: np.random.Generator) -> tuple[int, int, int]:
    """Square window whose area is ``p`` of the image: ``(top, left, side)``."""
    side = math.floor(math.sqrt(p) * min(H, W))
    if side < 1:
        raise AttackParamError(f"crop ratio {p} leaves an empty window")
    top = int(rng.integers(0, H - side + 1))
    left = int(rng.integers(0, W - side + 1))
    return top, left, side


def crop(img: torch.Tensor, window: tuple[int, int, int]) -> torch.Tensor:
    top, left, side = window
    return img[..., top:top + side, left:left + side]


def cropout(enc: torch.Tensor, cov: torch.Tensor, window: tuple[int, int, int]) -> torch.Tensor:
    top, left, side = window
    keep = torch.zeros_like(enc[:1, :1])
    keep[..., top:top + side, left:left + side] = 1.0
    return keep * enc + (1.0 - keep) * cov


def dropout_mask(shape, p: float, rng: np.random.Generator) -> torch.Tensor:
    """Per-pixel mask, 1 where the cover pixel replaces the encoded one."""
    B, _, H, W = shape
    return torch.from_numpy((rng.random((B, 1, H, W)) < p).astype(np.float32))


def dropout(enc: torch.Tensor, cov: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    mask = mask.to(enc.dtype)
    return (1.0 - mask) * enc + mask * cov


def rotate(img: torch.Tensor, alpha: float) -> torch.Tensor:
    """Rotate about the centre by ``alpha`` degrees, bilinear, border replicated."""
    B, _, H, W = img.shape
    a = math.radians(alpha)
    theta = torch.tensor([[math.cos(a), -math.sin(a) * H / W, 0.0],
                          [math.sin(a) * W / H, math.cos(a), 0.0]], dtype=img.dtype)
    grid = F.affine_grid(theta.expand(B, 2, 3), list(img.shape), align_corners=False)
    return F.grid_sample(img, grid, mode="bilinear", padding_mode="border", align_corners=False)


def gaussian_kernel(sigma: float, dtype=torch.float32) -> torch.Tensor:
    radius = math.ceil(3 * sigma)
    x = torch.arange(-radius, radius + 1, dtype=torch.float64)
    k = torch.exp(-0.5 * (x / sigma) ** 2)
    return (k / k.sum()).to(dtype)


def gaussian(img: torch.Tensor, sigma: float) -> torch.Tensor:
    k = gaussian_kernel(sigma, img.dtype)
    r = (len(k) - 1) // 2
    C = img.shape[1]
    x = F.pad(img, (r, r, r, r), mode="replicate")
    x = F.conv2d(x, k.view(1, 1, 1, -1).expand(C, 1, 1, -1), groups=C)
    return F.conv2d(x, k.view(1, 1, -1, 1).expand(C, 1, -1, 1), groups=C)


def resize(img: torch.Tensor, s: float, mode: str = "N") -> torch.Tensor:
    H, W = img.shape[-2:]
    size = (max(1, math.floor(H * s)), max(1, math.floor(W * s)))
    if mode == "N":
        return F.interpolate(img, size=size, mode="nearest")
    return F.interpolate(img, size=size, mode="bilinear", align_corners=False)


def subsample420(img: torch.Tensor) -> torch.Tensor:
    """Average chroma over 2x2 blocks, then replicate back; luma untouched."""
    H, W = img.shape[-2:]
    ph, pw = H % 2, W % 2
    chroma = img[:, 1:]
    if ph or pw:
        chroma = F.pad(chroma, (0, pw, 0, ph), mode="replicate")
    chroma = F.interpolate(F.avg_pool2d(chroma, 2), scale_factor=2, mode="nearest")
    return torch.cat([img[:, :1], chroma[..., :H, :W]], dim=1)


# -- noiser ------------------------------------------------------------------

def _transform(spec: AttackSpec, enc, cov, rng, clamp: bool):
    """Return ``(enc', cov', meta)`` for a single realization of ``spec``."""
    H, W = enc.shape[-2:]
    kind = spec.kind
    meta = {"kind": kind, "spec": str(spec)}
    if kind == "none":
        out = enc, cov
    elif kind in ("crop", "cropout"):
        window = crop_window(H, W, spec.p, rng)
        meta.update(top=window[0], left=window[1], side=window[2])
        if kind == "crop":
            out = crop(enc, window), crop(cov, window)
        else:
            out = cropout(enc, cov, window), cov
    elif kind == "dropout":
        mask = dropout_mask(enc.shape, spec.p, rng).to(enc.device)
        meta["mask"] = mask
        out = dropout(enc, cov, mask), cov
    elif kind == "rotate":
        out = rotate(enc, spec.alpha), rotate(cov, spec.alpha)
    elif kind == "gaussian":
        out = gaussian(enc, spec.sigma), gaussian(cov, spec.sigma)
    elif kind == "subsample420":
        out = subsample420(enc), subsample420(cov)
    elif kind == "resize":
        out = resize(enc, spec.s, spec.m), resize(cov, spec.s, spec.m)
        meta["out_size"] = tuple(out[0].shape[-2:])
    elif kind == "jpeg":
        out = jpeg_approx(enc, spec.q), jpeg_approx(cov, spec.q)
    else:  # pragma: no cover - guarded by AttackSpec
        raise AttackParamError(kind)
    if clamp:
        out = tuple(torch.clamp(x, 0.0, 1.0) for x in out)
    return out[0], out[1], meta


def _calibrate(grid: torch.Tensor, meta: dict, b: int):
    cells, masks = [], []
    for g in grid.detach().cpu().numpy().transpose(0, 2, 3, 1):
        cal = msgcodec.calibrate_grid(msgcodec.SpreadGrid(g), meta, b)
        cells.append(cal.values)
        if cal.mask is not None:
            masks.append(cal.mask)
    out = torch.from_numpy(np.stack(cells).transpose(0, 3, 1, 2).copy()).to(grid)
    mask = torch.from_numpy(np.stack(masks)).to(grid.device) if masks else None
    return out, mask


def apply_attack(enc: torch.Tensor, cov: torch.Tensor, grid: torch.Tensor | None,
                 spec: AttackSpec | str, seed=None, b: int = 16, clamp: bool = True) -> AttackResult:
    """Distort ``enc`` and ``cov`` identically and calibrate ``grid``.

    ``grid`` is a ``(B, k', rows, cols)`` ground-truth tensor or ``None``.
    ``seed`` may be an int or a ``numpy.random.Generator``; it drives the
    random parts of the realization (crop position, dropout mask).
    """
    if isinstance(spec, str):
        spec = AttackSpec.parse(spec)
    if enc.shape != cov.shape:
        raise AttackParamError(f"shape mismatch {tuple(enc.shape)} vs {tuple(cov.shape)}")
    rng = np.random.default_rng(seed)
    enc2, cov2, meta = _transform(spec, enc, cov, rng, clamp)
    grid_mask = None
    if grid is not None and spec.kind in ("crop", "cropout", "resize"):
        grid, grid_mask = _calibrate(grid, meta, b)
    return AttackResult(enc2, cov2, grid, grid_mask, meta)


def prenoise(enc, cov, grid, p: float, seed=None, b: int = 16) -> AttackResult:
    """Dropout stage run before the main noiser."""
    return apply_attack(enc, cov, grid, AttackSpec("dropout", p=p), seed, b)
