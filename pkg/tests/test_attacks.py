import numpy as np
import pytest
import torch

from ddmark import attacks
from ddmark.attacks import AttackParamError, AttackSpec, apply_attack, prenoise

ALL_SPECS = ["none", "crop:p=0.3", "cropout:p=0.3", "dropout:p=0.5", "rotate:alpha=5",
             "gaussian:sigma=2", "gaussian:sigma=4", "subsample420", "resize:s=0.5,m=N",
             "resize:s=0.5,m=L", "jpeg:q=50"]


def rand_img(shape=(2, 3, 64, 64), seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=g, dtype=dtype)


@pytest.mark.parametrize("text", ALL_SPECS)
def test_spec_string_roundtrip(text):
    spec = AttackSpec.parse(text)
    assert AttackSpec.parse(str(spec)) == spec
    assert str(spec) == text


@pytest.mark.parametrize("text", ["blur:sigma=2", "crop:p=0", "crop:p=1.5", "jpeg:q=0",
                                  "resize:s=0.5,m=X", "gaussian:sigma=-1", "crop:q=3", "crop:p=abc"])
def test_spec_invalid(text):
    with pytest.raises(AttackParamError):
        AttackSpec.parse(text)


def test_spec_defaults_follow_table():
    assert AttackSpec.parse("crop").p == 0.3
    assert AttackSpec.parse("jpeg").q == 50


def test_none_is_identity():
    enc, cov = rand_img(seed=1), rand_img(seed=2)
    grid = torch.rand(2, 6, 4, 4)
    res = apply_attack(enc, cov, grid, "none", seed=0)
    assert torch.equal(res.encoded, enc) and torch.equal(res.cover, cov) and torch.equal(res.grid, grid)


@pytest.mark.parametrize("text", ALL_SPECS)
def test_identical_realization(text):
    img = rand_img(seed=3)
    res = apply_attack(img, img.clone(), None, text, seed=5)
    assert torch.equal(res.encoded, res.cover)


@pytest.mark.parametrize("text", ALL_SPECS)
def test_same_function_on_both_images(text):
    """The cover channel sees the same transform the encoded channel would."""
    enc, cov = rand_img(seed=4), rand_img(seed=6)
    a = apply_attack(enc, cov, None, text, seed=9)
    b = apply_attack(cov, cov, None, text, seed=9)
    assert torch.equal(a.cover, b.encoded)


@pytest.mark.parametrize("text", ALL_SPECS)
def test_range_preserved(text):
    enc = rand_img(seed=1) * 1.4 - 0.2
    res = apply_attack(enc, rand_img(seed=2), None, text, seed=0)
    assert res.encoded.min() >= 0 and res.encoded.max() <= 1


def test_crop_geometry():
    img = rand_img((1, 3, 256, 256))
    res = apply_attack(img, img, None, "crop:p=0.3", seed=0)
    assert res.encoded.shape[-2:] == (140, 140)
    ratio = 140 * 140 / 256 ** 2
    assert abs(ratio - 0.3) / 0.3 < 0.01
    top, left = res.meta["top"], res.meta["left"]
    assert torch.equal(res.encoded, img[..., top:top + 140, left:left + 140])


def test_crop_positions_vary_with_seed():
    img = rand_img((1, 3, 128, 128))
    pos = {(apply_attack(img, img, None, "crop:p=0.3", seed=s).meta["top"],
            apply_attack(img, img, None, "crop:p=0.3", seed=s).meta["left"]) for s in range(20)}
    assert len(pos) > 10


def test_crop_window_too_small():
    with pytest.raises(AttackParamError):
        attacks.crop_window(4, 4, 0.01, np.random.default_rng(0))


def test_cropout_contents():
    enc, cov = rand_img(seed=1), rand_img(seed=2)
    res = apply_attack(enc, cov, None, "cropout:p=0.3", seed=3)
    t, l, s = res.meta["top"], res.meta["left"], res.meta["side"]
    inside = torch.zeros(64, 64, dtype=torch.bool)
    inside[t:t + s, l:l + s] = True
    assert torch.equal(res.encoded[..., inside], enc[..., inside])
    assert torch.equal(res.encoded[..., ~inside], cov[..., ~inside])


def test_cropout_full_window_is_encoded():
    enc, cov = rand_img(seed=1), rand_img(seed=2)
    res = apply_attack(enc, cov, None, "cropout:p=1", seed=0)
    assert torch.equal(res.encoded, enc)


def test_dropout_fraction_and_determinism():
    enc, cov = torch.ones(1, 3, 256, 256), torch.zeros(1, 3, 256, 256)
    a = apply_attack(enc, cov, None, "dropout:p=0.5", seed=42)
    b = apply_attack(enc, cov, None, "dropout:p=0.5", seed=42)
    assert torch.equal(a.encoded, b.encoded)
    frac_from_encoded = a.encoded[0, 0].mean().item()
    assert abs(frac_from_encoded - 0.5) <= 0.02
    # all channels of a pixel come from the same source
    assert torch.equal(a.encoded[0, 0], a.encoded[0, 2])


def test_dropout_identical_inputs():
    img = rand_img(seed=8)
    assert torch.equal(apply_attack(img, img, None, "dropout:p=0.5", seed=1).encoded, img)


def test_prenoise_full_replacement_gives_cover():
    enc, cov = rand_img(seed=1), rand_img(seed=2)
    assert torch.equal(prenoise(enc, cov, None, 1.0, seed=0).encoded, cov)


def test_prenoise_matches_dropout_and_composes_with_none():
    enc, cov = rand_img(seed=1), rand_img(seed=2)
    pre = prenoise(enc, cov, None, 0.4, seed=7)
    alone = apply_attack(enc, cov, None, "dropout:p=0.4", seed=7)
    chained = apply_attack(pre.encoded, pre.cover, None, "none", seed=0)
    assert torch.equal(pre.encoded, alone.encoded)
    assert torch.equal(chained.encoded, alone.encoded)


def test_rotate_zero_is_identity():
    img = rand_img(seed=3, dtype=torch.float64)
    assert (attacks.rotate(img, 0.0) - img).abs().max() < 1e-9


def test_rotate_90_matches_rot90():
    img = rand_img((1, 3, 32, 32), seed=3, dtype=torch.float64)
    out = attacks.rotate(img, 90.0)
    assert torch.allclose(out, torch.rot90(img, k=-1, dims=(2, 3)), atol=1e-9) or \
        torch.allclose(out, torch.rot90(img, k=1, dims=(2, 3)), atol=1e-9)


def test_gaussian_constant_image():
    img = torch.full((1, 3, 40, 40), 0.37)
    for sigma in (2.0, 4.0):
        assert torch.allclose(attacks.gaussian(img, sigma), img, atol=1e-6)


def test_gaussian_kernel_radius():
    assert len(attacks.gaussian_kernel(2.0)) == 13
    assert len(attacks.gaussian_kernel(4.0)) == 25
    assert abs(attacks.gaussian_kernel(1.3).sum().item() - 1) < 1e-6


def test_subsample_gray_unchanged():
    img = torch.full((1, 3, 32, 32), 0.5)
    img[:, 0] = torch.rand(32, 32)
    assert torch.equal(attacks.subsample420(img), img)


def test_subsample_averages_chroma():
    img = rand_img((1, 3, 8, 8), dtype=torch.float64)
    out = attacks.subsample420(img)
    assert torch.equal(out[:, 0], img[:, 0])
    assert torch.allclose(out[0, 1, 0, 0], img[0, 1, :2, :2].mean())
    assert out[0, 2, 2, 3] == out[0, 2, 3, 2]


@pytest.mark.parametrize("mode", ["N", "L"])
def test_resize_shape_and_grid(mode):
    enc = rand_img((1, 3, 256, 256))
    grid = torch.rand(1, 6, 16, 16)
    res = apply_attack(enc, enc, grid, f"resize:s=0.5,m={mode}", seed=0)
    assert res.encoded.shape[-2:] == (128, 128)
    assert res.grid.shape == (1, 6, 8, 8)


def test_crop_calibrates_grid_like_msgcodec():
    from ddmark import msgcodec

    enc = rand_img((2, 3, 256, 256))
    grid = (torch.rand(2, 6, 16, 16) > 0.5).float()
    res = apply_attack(enc, enc, grid, "crop:p=0.3", seed=1)
    assert res.grid.shape == (2, 6, 8, 8)
    ref = msgcodec.calibrate_grid(msgcodec.SpreadGrid(grid[1].numpy().transpose(1, 2, 0)), res.meta, 16)
    assert np.allclose(res.grid[1].numpy().transpose(1, 2, 0), ref.values)


def test_cropout_grid_mask():
    enc = rand_img((2, 3, 256, 256))
    grid = torch.rand(2, 6, 16, 16)
    res = apply_attack(enc, enc, grid, "cropout:p=0.3", seed=1)
    assert res.grid_mask.shape == (2, 16, 16)
    assert res.grid_mask.sum(dim=(1, 2)).min() >= 49  # 140px window holds at least 7x7 whole cells


def test_shape_mismatch():
    with pytest.raises(AttackParamError):
        apply_attack(rand_img((1, 3, 32, 32)), rand_img((1, 3, 16, 16)), None, "none")


# -- differentiability -------------------------------------------------------

@pytest.mark.parametrize("text", ALL_SPECS)
def test_finite_difference_gradients(text):
    """d mean(output) / d pixel: autodiff vs central differences.

    For JPEG the backward pass is the identity through rounding, so the
    reference is the same pipeline without rounding.
    """
    enc = (rand_img((1, 3, 32, 32), seed=11, dtype=torch.float64) * 0.6 + 0.2).requires_grad_(True)
    cov = rand_img((1, 3, 32, 32), seed=12, dtype=torch.float64) * 0.6 + 0.2
    spec = AttackSpec.parse(text)

    def forward(x, rounding="ste"):
        if spec.kind == "jpeg":
            from ddmark.jpeg import jpeg_approx
            return jpeg_approx(x, spec.q, rounding)
        return apply_attack(x, cov, None, spec, seed=3, b=8, clamp=False).encoded

    out = forward(enc)
    (grad,) = torch.autograd.grad(out.mean(), enc)
    res = apply_attack(enc.detach(), cov, None, spec, seed=3, b=8)
    # pick a pixel the output actually depends on
    if spec.kind == "crop":
        pos = (0, 0, res.meta["top"] + 2, res.meta["left"] + 3)
    elif spec.kind in ("cropout", "dropout"):
        nz = torch.nonzero(grad[0, 0])
        pos = (0, 0, *nz[len(nz) // 2].tolist())
    else:
        pos = (0, 1, 12, 18)
    h = 1e-5
    x = enc.detach().clone()
    x[pos] += h
    plus = forward(x, "none").mean()
    x[pos] -= 2 * h
    minus = forward(x, "none").mean()
    fd = ((plus - minus) / (2 * h)).item()
    assert fd != 0
    assert abs(grad[pos].item() - fd) <= 1e-3 * abs(fd)
