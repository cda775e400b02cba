"""Post-hoc transparency control and PSNR."""
from __future__ import annotations

import csv

import numpy as np
import torch

PSNR_CAP = 99.0


def blend_mask(shape, p: float, seed=None) -> np.ndarray:
    """Bernoulli(p) mask over every entry of ``shape``, 1 keeps the encoded value."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    return (rng.random(shape) < p).astype(np.float32)


def bernoulli_blend(encoded, cover, p: float, seed=None):
    """Keep each encoded entry with probability ``p``, else take the cover entry.

    Works on numpy arrays and torch tensors of equal shape.
    """
    if tuple(encoded.shape) != tuple(cover.shape):
        raise ValueError(f"shape mismatch {tuple(encoded.shape)} vs {tuple(cover.shape)}")
    mask = blend_mask(tuple(encoded.shape), p, seed)
    if isinstance(encoded, torch.Tensor):
        mask = torch.from_numpy(mask).to(encoded)
        return torch.where(mask > 0, encoded, cover)
    return np.where(mask > 0, encoded, cover)


def _as_hwc(img) -> np.ndarray:
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().double().numpy()
        if img.ndim == 4:
            img = img[0]
        return img.transpose(1, 2, 0)
    return np.asarray(img, dtype=np.float64)


def psnr(a, b, per_channel: bool = False, cap: float = PSNR_CAP):
    """PSNR with peak 1. Arrays are ``(H, W, C)``; tensors ``(C, H, W)`` or ``(1, C, H, W)``."""
    a, b = _as_hwc(a), _as_hwc(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    err = (a - b) ** 2
    mse = err.reshape(-1, err.shape[-1]).mean(axis=0) if per_channel else np.array([err.mean()])
    with np.errstate(divide="ignore"):
        out = np.where(mse > 0, 10.0 * np.log10(1.0 / np.where(mse > 0, mse, 1.0)), cap)
    out = np.minimum(out, cap)
    return tuple(float(x) for x in out) if per_channel else float(out[0])


def transparency_sweep(model, covers: torch.Tensor, p_values, attacks, seed: int = 0,
                       batch_size: int = 16) -> list[dict]:
    """Blend, attack and decode ``covers`` for every ``p``.

    Messages, blend masks and attack realizations depend only on ``seed``, so
    rows for different ``p`` are directly comparable. Each row holds the mean
    per-channel PSNR and one bit-accuracy column per attack string.
    """
    from .training import encode_batch, decode_accuracy
    from .attacks import AttackSpec, apply_attack

    specs = [AttackSpec.parse(a) if isinstance(a, str) else a for a in attacks]
    model.eval()
    rows = []
    with torch.no_grad():
        encoded, messages = [], []
        for start in range(0, len(covers), batch_size):
            cov = covers[start:start + batch_size]
            enc, msgs, _ = encode_batch(model, cov, np.random.default_rng([seed, start]))
            encoded.append(enc)
            messages.append(msgs)
        encoded = torch.cat(encoded)
        messages = np.concatenate(messages)
        for p in p_values:
            blended = torch.stack([bernoulli_blend(encoded[i], covers[i], p, seed=[seed, i])
                                   for i in range(len(covers))])
            ps = np.array([psnr(blended[i], covers[i], per_channel=True) for i in range(len(covers))])
            row = {"p": float(p), "psnr_Y": ps[:, 0].mean(), "psnr_Cb": ps[:, 2].mean(),
                   "psnr_Cr": ps[:, 1].mean()}
            for j, spec in enumerate(specs):
                res = apply_attack(blended, covers, None, spec, seed=[seed, j], b=model.params.b)
                row[str(spec)] = float(np.mean(decode_accuracy(model, res.encoded, messages)))
            rows.append(row)
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    if not rows:
        return
    fields = ["p", "psnr_Y", "psnr_Cb", "psnr_Cr"] + [k for k in rows[0] if k not in
                                                      ("p", "psnr_Y", "psnr_Cb", "psnr_Cr")]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
