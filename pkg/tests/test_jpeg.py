import io

import numpy as np
import pytest
import torch
from PIL import Image

from ddmark.color import rgb_to_ycrcb, to_array, to_tensor, ycrcb_to_rgb
from ddmark.data import synthetic_photos
from ddmark.jpeg import CHROMA_TABLE, LUMA_TABLE, dct_matrix, jpeg_approx, quality_scale, quant_tables
from ddmark.transparency import psnr


def pil_jpeg(rgb: np.ndarray, q: int) -> tuple[np.ndarray, dict]:
    buf = io.BytesIO()
    Image.fromarray(rgb).save(buf, "JPEG", quality=q, subsampling=2)
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB")), im.quantization


def test_quality_50_uses_base_tables():
    assert quality_scale(50) == 100
    luma, chroma = quant_tables(50)
    assert np.array_equal(luma, LUMA_TABLE) and np.array_equal(chroma, CHROMA_TABLE)


@pytest.mark.parametrize("q", [10, 50, 75, 95])
def test_tables_match_reference_codec(q):
    _, tables = pil_jpeg(np.zeros((16, 16, 3), dtype=np.uint8), q)
    luma, chroma = quant_tables(q)
    assert np.array_equal(np.array(tables[0]).reshape(8, 8), luma)
    assert np.array_equal(np.array(tables[1]).reshape(8, 8), chroma)


def test_quality_out_of_range():
    with pytest.raises(ValueError):
        quant_tables(0)


def test_dct_is_orthonormal():
    c = dct_matrix()
    assert np.allclose(c @ c.T, np.eye(8))


@pytest.mark.parametrize("q", [5, 50, 90])
def test_constant_gray_survives(q):
    img = torch.full((1, 3, 32, 32), 0.5)
    img[:, 0] = 128 / 255
    out = jpeg_approx(img, q, "hard")
    assert (out - img).abs().max() <= 1 / 255


def test_ste_forward_equals_hard_path():
    img = torch.rand(2, 3, 48, 40, generator=torch.Generator().manual_seed(0))
    assert torch.equal(jpeg_approx(img, 50, "ste"), jpeg_approx(img, 50, "hard"))


def test_gradient_nonzero():
    img = torch.rand(1, 3, 32, 32, generator=torch.Generator().manual_seed(1)).requires_grad_(True)
    jpeg_approx(img, 50).sum().backward()
    assert (img.grad != 0).float().mean() > 0.99


def test_odd_sizes_are_cropped_back():
    img = torch.rand(1, 3, 30, 21)
    assert jpeg_approx(img, 50).shape == img.shape


def test_rounding_mode_validation():
    with pytest.raises(ValueError):
        jpeg_approx(torch.rand(1, 3, 16, 16), 50, "floor")


def test_against_reference_codec_q50():
    """Hard-rounding path vs Pillow's libjpeg on 16 natural images."""
    values = []
    for rgb in synthetic_photos(16, 128, seed=123):
        ref, _ = pil_jpeg(rgb, 50)
        ycc = to_tensor(rgb_to_ycrcb(rgb / 255.0)).double()
        ours = ycrcb_to_rgb(to_array(jpeg_approx(ycc, 50, "hard")))
        values.append(psnr(ours, ref / 255.0))
    assert min(values) >= 35.0, values
