"""Image ingestion.

``load_image_dir`` reads a directory of photos. ``synthetic_photos`` stands in
for a natural-image dataset when none is available: random crops, flips and
tints of the photographs bundled with scikit-image.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from .color import rgb_to_ycrcb

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def write_rgb(path, rgb: np.ndarray, text: dict | None = None) -> None:
    """Save 8-bit RGB; ``text`` entries become PNG text chunks."""
    info = None
    if text:
        info = PngInfo()
        for k, v in text.items():
            info.add_text(k, v)
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path, pnginfo=info)


def read_text(path) -> dict:
    with Image.open(path) as im:
        return dict(getattr(im, "text", {}))


def resize_rgb(rgb: np.ndarray, size: int) -> np.ndarray:
    return np.asarray(Image.fromarray(rgb).resize((size, size), Image.BILINEAR))


def to_ycrcb_batch(rgbs: list[np.ndarray]) -> torch.Tensor:
    arr = np.stack([rgb_to_ycrcb(x / 255.0) for x in rgbs]).astype(np.float32)
    return torch.from_numpy(arr.transpose(0, 3, 1, 2).copy())


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_image_dir(directory, size: int, limit: int | None = None) -> torch.Tensor:
    paths = list_images(directory)
    if not paths:
        raise FileNotFoundError(f"no images in {directory}")
    if limit is not None:
        paths = paths[:limit]
    return to_ycrcb_batch([resize_rgb(read_rgb(p), size) for p in paths])


def _sources() -> list[np.ndarray]:
    from skimage import data

    out = []
    for name in ("astronaut", "chelsea", "coffee", "rocket", "hubble_deep_field",
                 "immunohistochemistry", "retina"):
        out.append(getattr(data, name)())
    left, right, _ = data.stereo_motorcycle()
    out += [left, right]
    for name in ("camera", "brick", "grass", "gravel", "moon", "coins", "page"):
        gray = getattr(data, name)()
        out.append(np.repeat(gray[..., None], 3, axis=2))
    return [np.ascontiguousarray(x[..., :3]) for x in out]


def synthetic_photos(count: int, size: int, seed: int = 0) -> list[np.ndarray]:
    """``count`` RGB uint8 images of ``size x size`` from random views of bundled photos."""
    rng = np.random.default_rng(seed)
    sources = _sources()
    images = []
    for _ in range(count):
        src = sources[rng.integers(len(sources))]
        h, w = src.shape[:2]
        side = int(rng.uniform(0.2, 1.0) * min(h, w))
        side = max(side, min(size, h, w))
        top, left = rng.integers(0, h - side + 1), rng.integers(0, w - side + 1)
        view = src[top:top + side, left:left + side]
        if rng.random() < 0.5:
            view = view[:, ::-1]
        img = resize_rgb(np.ascontiguousarray(view), size).astype(np.float64)
        if src.ndim == 3 and np.allclose(src[..., 0], src[..., 1]):
            img = img * rng.uniform(0.7, 1.0, size=3)
        images.append(np.clip(img * rng.uniform(0.8, 1.2), 0, 255).astype(np.uint8))
    return images


def load_dataset(n_train: int, n_test: int, size: int, data_dir=None, seed: int = 0):
    """Disjoint ``(train, test)`` YCrCb tensors."""
    total = n_train + n_test
    if data_dir is None:
        imgs = to_ycrcb_batch(synthetic_photos(total, size, seed))
    else:
        imgs = load_image_dir(data_dir, size)
        if len(imgs) < total:
            raise ValueError(f"{data_dir} has {len(imgs)} images, need {total}")
        imgs = imgs[np.random.default_rng(seed).permutation(len(imgs))[:total]]
    return imgs[:n_train], imgs[n_train:total]
