"""SSIM with a uniform window, plus the analytic gradient w.r.t. the
second image.

The local statistics use a box filter normalized by the per-pixel
window population (borders see smaller windows), written as the linear
operator W(x) = boxsum(x) / boxsum(1).  Its adjoint, needed for the
gradient, is W^T(g) = boxsum(g / boxsum(1)).
"""

import numpy as np

C1 = 0.01 ** 2
C2 = 0.03 ** 2
DEFAULT_WINDOW = 7


def _box_sum(img: np.ndarray, size: int) -> np.ndarray:
    """Sum over a size x size window centered per pixel, zero outside."""
    r = size // 2
    padded = np.pad(img, [(r + 1, r)] * 2 + [(0, 0)] * (img.ndim - 2))
    cs = padded.cumsum(axis=0).cumsum(axis=1)
    h, w = img.shape[:2]
    return (
        cs[size:, size:][:h, :w]
        - cs[:-size, size:][:h, :w]
        - cs[size:, :-size][:h, :w]
        + cs[:-size, :-size][:h, :w]
    )


def _window_counts(shape, size: int) -> np.ndarray:
    ones = np.ones(shape[:2] + (1,))
    return _box_sum(ones, size)[..., 0]


def ssim_map(x: np.ndarray, y: np.ndarray, size: int = DEFAULT_WINDOW) -> np.ndarray:
    """Per-pixel SSIM of two (H, W, C) images in [0, 1]."""
    cnt = _window_counts(x.shape, size)[..., None]
    ux = _box_sum(x, size) / cnt
    uy = _box_sum(y, size) / cnt
    vxx = _box_sum(x * x, size) / cnt
    vyy = _box_sum(y * y, size) / cnt
    vxy = _box_sum(x * y, size) / cnt
    a1 = 2.0 * ux * uy + C1
    a2 = 2.0 * (vxy - ux * uy) + C2
    b1 = ux * ux + uy * uy + C1
    b2 = (vxx - ux * ux) + (vyy - uy * uy) + C2
    return (a1 * a2) / (b1 * b2)


def masked_ssim(x, y, region: np.ndarray, size: int = DEFAULT_WINDOW) -> float:
    """Mean SSIM over the pixels selected by ``region``."""
    s = ssim_map(np.asarray(x, np.float64), np.asarray(y, np.float64), size)
    return float(s[region].mean())


def masked_ssim_and_grad(
    x: np.ndarray, y: np.ndarray, region: np.ndarray, size: int = DEFAULT_WINDOW
) -> tuple[float, np.ndarray]:
    """(mean SSIM over region, d meanSSIM / dy).

    Gradient of the region mean through the raw moments (uy, vyy, vxy):

        dS/duy  = 2 ux (A2 - A1)/(B1 B2) - 2 uy S (1/B1 - 1/B2)
        dS/dvxy = 2 A1 / (B1 B2)
        dS/dvyy = -S / B2

    pulled back through the box-filter adjoint.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    cnt = _window_counts(x.shape, size)[..., None]
    ux = _box_sum(x, size) / cnt
    uy = _box_sum(y, size) / cnt
    vxx = _box_sum(x * x, size) / cnt
    vyy = _box_sum(y * y, size) / cnt
    vxy = _box_sum(x * y, size) / cnt
    a1 = 2.0 * ux * uy + C1
    a2 = 2.0 * (vxy - ux * uy) + C2
    b1 = ux * ux + uy * uy + C1
    b2 = (vxx - ux * ux) + (vyy - uy * uy) + C2
    s = (a1 * a2) / (b1 * b2)

    n = max(int(region.sum()), 1)
    g = (region[..., None] / (n * x.shape[2])) * np.ones_like(s)

    ds_duy = 2.0 * ux * (a2 - a1) / (b1 * b2) - 2.0 * uy * s * (1.0 / b1 - 1.0 / b2)
    ds_dvxy = 2.0 * a1 / (b1 * b2)
    ds_dvyy = -s / b2

    grad = (
        _box_sum(g * ds_duy / cnt, size)
        + x * _box_sum(g * ds_dvxy / cnt, size)
        + 2.0 * y * _box_sum(g * ds_dvyy / cnt, size)
    )
    value = float(s[region].mean()) if region.any() else 0.0
    return value, grad


def erode(mask: np.ndarray, size: int = DEFAULT_WINDOW) -> np.ndarray:
    """Pixels whose full size x size window lies inside the mask."""
    full = _box_sum(mask.astype(np.float64)[..., None], size)[..., 0]
    return full >= size * size - 0.5
