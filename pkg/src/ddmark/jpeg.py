"""Differentiable JPEG approximation.

Baseline JPEG without entropy coding: 4:2:0 chroma subsampling, 8x8 block
DCT, quantization with the standard IJG tables scaled by quality, and the
inverse path. Rounding is the only non-differentiable step; ``rounding``
selects how it is treated:

``"ste"``   round in the forward pass, identity gradient in the backward pass
``"hard"``  plain rounding (zero gradient almost everywhere)
``"none"``  no rounding at all; the linear pipeline the STE gradient follows
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

CHROMA_TABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)


def quality_scale(q: float) -> float:
    if not 1 <= q <= 100:
        raise ValueError(f"JPEG quality must be in [1, 100], got {q}")
    return 5000.0 / q if q < 50 else 200.0 - 2.0 * q


def quant_tables(q: float) -> tuple[np.ndarray, np.ndarray]:
    """IJG quality scaling: ``floor((base * scale + 50) / 100)`` clamped to [1, 255]."""
    scale = quality_scale(q)
    luma = np.clip(np.floor((LUMA_TABLE * scale + 50) / 100), 1, 255)
    chroma = np.clip(np.floor((CHROMA_TABLE * scale + 50) / 100), 1, 255)
    return luma, chroma


def dct_matrix(n: int = 8) -> np.ndarray:
    """Orthonormal DCT-II matrix ``C`` so that ``C @ x @ C.T`` is the 2-D DCT."""
    c = np.zeros((n, n))
    for u in range(n):
        alpha = math.sqrt(1.0 / n) if u == 0 else math.sqrt(2.0 / n)
        for x in range(n):
            c[u, x] = alpha * math.cos((2 * x + 1) * u * math.pi / (2 * n))
    return c


def _round(x: torch.Tensor, rounding: str) -> torch.Tensor:
    if rounding == "ste":
        return x + (torch.round(x) - x).detach()
    if rounding == "hard":
        return torch.round(x)
    if rounding == "none":
        return x
    raise ValueError(f"unknown rounding mode {rounding!r}")


def _blocks(x: torch.Tensor) -> torch.Tensor:
    # (B, H, W) -> (B, H/8, W/8, 8, 8)
    B, H, W = x.shape
    return x.reshape(B, H // 8, 8, W // 8, 8).permute(0, 1, 3, 2, 4)


def _unblocks(x: torch.Tensor) -> torch.Tensor:
    B, nh, nw = x.shape[:3]
    return x.permute(0, 1, 3, 2, 4).reshape(B, nh * 8, nw * 8)


def _code_plane(plane: torch.Tensor, table: np.ndarray, rounding: str) -> torch.Tensor:
    c = torch.as_tensor(dct_matrix(), dtype=plane.dtype, device=plane.device)
    qt = torch.as_tensor(table, dtype=plane.dtype, device=plane.device)
    blocks = _blocks(plane * 255.0 - 128.0)
    coef = c @ blocks @ c.T
    coef = _round(coef / qt, rounding) * qt
    return (_unblocks(c.T @ coef @ c) + 128.0) / 255.0


def jpeg_approx(img: torch.Tensor, q: float, rounding: str = "ste") -> torch.Tensor:
    """Compress and decompress a ``(B, 3, H, W)`` YCrCb batch in [0, 1].

    Sizes that are not multiples of 16 are edge-padded and cropped back.
    Chroma is upsampled with the triangle filter used by common decoders.
    """
    luma_t, chroma_t = quant_tables(q)
    B, _, H, W = img.shape
    ph, pw = (-H) % 16, (-W) % 16
    x = F.pad(img, (0, pw, 0, ph), mode="replicate") if ph or pw else img

    y = _code_plane(x[:, 0], luma_t, rounding)
    chroma = F.avg_pool2d(x[:, 1:], 2)
    cr = _code_plane(chroma[:, 0], chroma_t, rounding)
    cb = _code_plane(chroma[:, 1], chroma_t, rounding)
    chroma = upsample_chroma(torch.stack([cr, cb], dim=1))
    out = torch.cat([y[:, None], chroma], dim=1)
    return out[:, :, :H, :W]


def upsample_chroma(chroma: torch.Tensor) -> torch.Tensor:
    return F.interpolate(chroma, scale_factor=2, mode="bilinear", align_corners=False)
