"""Uniform-window SSIM and its analytic gradient."""

import numpy as np

from splatmakeup.ssim import erode, masked_ssim_and_grad, ssim_map


def test_identical_images_score_one():
    rng = np.random.default_rng(31)
    x = rng.uniform(0, 1, (12, 12, 3))
    s = ssim_map(x, x)
    np.testing.assert_allclose(s, 1.0, atol=1e-12)


def test_contrast_reduces_score():
    rng = np.random.default_rng(32)
    x = rng.uniform(0, 1, (16, 16, 3))
    y = 0.5 + 0.2 * (x - 0.5)
    region = np.ones((16, 16), dtype=bool)
    v, _ = masked_ssim_and_grad(x, y, region)
    assert v < 0.99


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(33)
    x = rng.uniform(0.2, 0.8, (9, 9, 3))
    y = np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1)
    region = np.zeros((9, 9), dtype=bool)
    region[2:7, 2:7] = True
    value, grad = masked_ssim_and_grad(x, y, region)
    h = 1e-6
    rng2 = np.random.default_rng(34)
    for _ in range(30):
        i, j, c = rng2.integers(0, 9), rng2.integers(0, 9), rng2.integers(0, 3)
        yp, ym = y.copy(), y.copy()
        yp[i, j, c] += h
        ym[i, j, c] -= h
        vp, _ = masked_ssim_and_grad(x, yp, region)
        vm, _ = masked_ssim_and_grad(x, ym, region)
        fd = (vp - vm) / (2 * h)
        assert abs(fd - grad[i, j, c]) < 1e-5 * max(1.0, abs(fd)), (fd, grad[i, j, c])


def test_erode_shrinks_mask():
    mask = np.zeros((12, 12), dtype=bool)
    mask[2:10, 2:10] = True
    interior = erode(mask, 7)
    assert interior.sum() == 4  # only the 2x2 center fits a full 7x7 window
    assert interior[5:7, 5:7].all()
