"""Software Gaussian splatting: EWA projection, front-to-back compositing,
and the analytic backward pass for per-kernel color and opacity.

The pixel color is

    C = sum_i c_i a'_i prod_{j<i} (1 - a'_j) + bg * prod_j (1 - a'_j)

with a'_i = alpha_i * exp(-0.5 d^T cov2d^{-1} d) evaluated at the pixel
center, splats ordered front to back by depth (ties broken by source
index).  Three hard gates shape both passes identically:

  * a' is clamped to <= 0.999 (no gradient through the clamp),
  * contributions with a' < 1/255 are skipped,
  * a pixel stops compositing once its transmittance drops below 1e-4.

Rendering is organized around a flat table of (pixel, splat) rows sorted
by pixel then depth rank, so the per-pixel products and the backward
suffix sums are plain segmented scans.  Everything runs single-threaded
in a fixed order; identical inputs give bit-identical images and
gradients.
"""

from dataclasses import dataclass

import numpy as np

from .avatar import WorldGaussians
from .camera import Camera
from .rotations import quat_to_matrix

NEAR_PLANE = 0.01
COV_DILATION = 0.3          # pixels^2 added to the cov2d diagonal (low-pass)
ALPHA_CLAMP = 0.999
ALPHA_SKIP = 1.0 / 255.0
TRANSMITTANCE_MIN = 1e-4
FOOTPRINT_SIGMA = 3.0
# Row cutoff for the flat tables: beyond this Mahalanobis distance even a
# fully opaque splat falls under the 1/255 skip gate, so trimming there
# adds no approximation on top of the gate itself.
_Q_CUT = 2.0 * np.log(255.0)
_BBOX_SIGMA = np.sqrt(_Q_CUT)

WHITE = np.array([1.0, 1.0, 1.0])


@dataclass
class Splat2D:
    """A batch of projected Gaussians, ready for compositing."""

    mean2d: np.ndarray        # (M, 2) pixel coordinates
    cov2d: np.ndarray         # (M, 2, 2) symmetric positive-definite
    depth: np.ndarray         # (M,) camera-space z
    color: np.ndarray         # (M, 3)
    opacity: np.ndarray       # (M,) alpha in (0, 1)
    source_index: np.ndarray  # (M,) kernel index each splat came from

    def __len__(self) -> int:
        return len(self.depth)


def project_gaussians(gaussians: WorldGaussians, camera: Camera) -> Splat2D:
    """EWA projection of world Gaussians; culled splats are dropped.

    cov2d = J W Sigma W^T J^T (top-left 2x2) with J the pinhole Jacobian
    at the splat center and W the world-to-camera rotation, plus the
    low-pass dilation on the diagonal.  A splat is culled when its depth
    is <= NEAR_PLANE or its 3-sigma footprint misses the image.
    """
    p_cam = camera.to_camera(gaussians.position)
    z = p_cam[:, 2]
    visible = z > NEAR_PLANE
    p_cam = p_cam[visible]
    z = z[visible]

    x, y = p_cam[:, 0], p_cam[:, 1]
    mean2d = np.stack(
        [camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy], axis=1
    )

    rot = quat_to_matrix(gaussians.quat[visible])
    ms = rot * gaussians.scale[visible][:, None, :]
    sigma = ms @ ms.transpose(0, 2, 1)
    w = camera.rotation
    sigma_cam = np.einsum("ij,njk,lk->nil", w, sigma, w)

    n = len(z)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = camera.fx / z
    jac[:, 0, 2] = -camera.fx * x / (z * z)
    jac[:, 1, 1] = camera.fy / z
    jac[:, 1, 2] = -camera.fy * y / (z * z)
    cov2d = np.einsum("nij,njk,nlk->nil", jac, sigma_cam, jac)
    cov2d[:, 0, 0] += COV_DILATION
    cov2d[:, 1, 1] += COV_DILATION

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    lam_max = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
    radius = FOOTPRINT_SIGMA * np.sqrt(lam_max)
    on_image = (
        (mean2d[:, 0] + radius >= 0.0)
        & (mean2d[:, 0] - radius <= camera.width)
        & (mean2d[:, 1] + radius >= 0.0)
        & (mean2d[:, 1] - radius <= camera.height)
    )

    idx = np.flatnonzero(visible)[on_image]
    return Splat2D(
        mean2d=mean2d[on_image],
        cov2d=cov2d[on_image],
        depth=z[on_image],
        color=gaussians.color[idx],
        opacity=gaussians.opacity[idx],
        source_index=idx.astype(np.int64),
    )


def project_gaussian(gaussians: WorldGaussians, camera: Camera, index: int = 0):
    """Single-Gaussian projection; returns None when the splat is culled."""
    one = WorldGaussians(
        position=gaussians.position[index : index + 1],
        quat=gaussians.quat[index : index + 1],
        scale=gaussians.scale[index : index + 1],
        color=gaussians.color[index : index + 1],
        opacity=gaussians.opacity[index : index + 1],
    )
    batch = project_gaussians(one, camera)
    if len(batch) == 0:
        return None
    batch.source_index[:] = index
    return batch


@dataclass
class SplatScene:
    """Geometry-only compositing tables for one camera and splat set.

    The tables depend only on splat positions/covariances, so a trainer
    can build the scene once and re-composite with fresh colors and
    opacities every iteration.
    """

    width: int
    height: int
    n_splats: int            # splats that survived sorting and bbox clipping
    splat_perm: np.ndarray   # (M,) index into the input Splat2D batch
    source_index: np.ndarray # (M,) kernel index per kept splat
    row_pixel: np.ndarray    # (Q,) flat pixel id, sorted ascending
    row_splat: np.ndarray    # (Q,) index into the kept splat list
    row_gauss: np.ndarray    # (Q,) exp(-0.5 q), q <= 9

    def gather(self, per_kernel: np.ndarray) -> np.ndarray:
        """Per-kernel array -> per-kept-splat array."""
        return per_kernel[self.source_index]


def build_scene(splats: Splat2D, camera: Camera) -> SplatScene:
    w, h = camera.width, camera.height
    if len(splats) == 0:
        empty = np.empty(0, dtype=np.int64)
        return SplatScene(w, h, 0, empty, empty, empty, empty.astype(np.float64), empty.astype(np.float64))

    order = np.lexsort((splats.source_index, splats.depth))
    mean = splats.mean2d[order]
    cov = splats.cov2d[order]

    rx = _BBOX_SIGMA * np.sqrt(cov[:, 0, 0])
    ry = _BBOX_SIGMA * np.sqrt(cov[:, 1, 1])
    x0 = np.clip(np.ceil(mean[:, 0] - rx - 0.5), 0, w - 1).astype(np.int64)
    x1 = np.clip(np.floor(mean[:, 0] + rx - 0.5), 0, w - 1).astype(np.int64)
    y0 = np.clip(np.ceil(mean[:, 1] - ry - 0.5), 0, h - 1).astype(np.int64)
    y1 = np.clip(np.floor(mean[:, 1] + ry - 0.5), 0, h - 1).astype(np.int64)
    inside = (
        (mean[:, 0] + rx >= 0.5) & (mean[:, 0] - rx <= w - 0.5)
        & (mean[:, 1] + ry >= 0.5) & (mean[:, 1] - ry <= h - 0.5)
    )
    nonempty = inside & (x1 >= x0) & (y1 >= y0)

    order = order[nonempty]
    mean, cov = mean[nonempty], cov[nonempty]
    x0, x1, y0, y1 = x0[nonempty], x1[nonempty], y0[nonempty], y1[nonempty]
    m = len(order)
    if m == 0:
        empty = np.empty(0, dtype=np.int64)
        return SplatScene(w, h, 0, empty, empty, empty, empty.astype(np.float64), empty.astype(np.float64))

    nx = x1 - x0 + 1
    ny = y1 - y0 + 1
    area = nx * ny
    starts = np.concatenate([[0], np.cumsum(area)[:-1]])
    total = int(area.sum())

    rep = np.repeat(np.arange(m, dtype=np.int64), area)
    off = np.arange(total, dtype=np.int64) - np.repeat(starts, area)
    nx_rep = nx[rep]
    px = x0[rep] + off % nx_rep
    py = y0[rep] + off // nx_rep

    dx = px + 0.5 - mean[rep, 0]
    dy = py + 0.5 - mean[rep, 1]
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    ia, ib, ic = (c / det)[rep], (-b / det)[rep], (a / det)[rep]
    q = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy

    keep = q <= _Q_CUT
    rep = rep[keep]
    pixel = py[keep] * w + px[keep]
    gauss = np.exp(-0.5 * q[keep])

    perm = np.argsort(pixel, kind="stable")  # stable keeps depth order per pixel
    return SplatScene(
        width=w,
        height=h,
        n_splats=m,
        splat_perm=order,
        source_index=splats.source_index[order],
        row_pixel=pixel[perm],
        row_splat=rep[perm],
        row_gauss=gauss[perm],
    )


def _segments(pixel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start offsets and lengths of equal-pixel runs in a sorted array."""
    if len(pixel) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    starts = np.concatenate([[0], np.flatnonzero(np.diff(pixel)) + 1])
    lengths = np.diff(np.concatenate([starts, [len(pixel)]]))
    return starts, lengths


def _forward_tables(scene: SplatScene, alpha: np.ndarray):
    """Shared forward state: filtered rows, transmittances, and gates.

    Returns None when no row survives the skip threshold.
    """
    raw = alpha[scene.row_splat] * scene.row_gauss
    clamped = raw > ALPHA_CLAMP
    a = np.minimum(raw, ALPHA_CLAMP)
    keep = a >= ALPHA_SKIP
    if not np.any(keep):
        return None

    rows = np.flatnonzero(keep)
    a = a[rows]
    pixel = scene.row_pixel[rows]
    splat = scene.row_splat[rows]
    gauss = scene.row_gauss[rows]
    clamped = clamped[rows]

    starts, lengths = _segments(pixel)
    log_t = np.log1p(-a)
    cs = np.cumsum(log_t)
    excl = cs - log_t
    base = np.repeat(excl[starts], lengths)
    t_excl = np.exp(excl - base)
    gate = t_excl >= TRANSMITTANCE_MIN  # true-prefix per segment: T never grows

    n_active = np.add.reduceat(gate.astype(np.int64), starts)
    seg_end = np.concatenate([starts[1:], [len(a)]])
    t_full = np.exp(cs[seg_end - 1] - excl[starts])
    cut = n_active < lengths
    t_final = np.where(cut, t_excl[np.minimum(starts + n_active, len(a) - 1)], t_full)

    return {
        "a": a,
        "pixel": pixel,
        "splat": splat,
        "gauss": gauss,
        "clamped": clamped,
        "starts": starts,
        "lengths": lengths,
        "t_excl": t_excl,
        "gate": gate,
        "seg_pixel": pixel[starts],
        "t_final": t_final,
    }


def composite(
    scene: SplatScene,
    color: np.ndarray,
    alpha: np.ndarray,
    background=WHITE,
) -> np.ndarray:
    """Front-to-back compositing; per-splat color (M, 3) and alpha (M,).

    Returns a float64 (H, W, 3) image.
    """
    bg = np.asarray(background, dtype=np.float64)
    hw = scene.height * scene.width
    img = np.zeros((hw, 3))
    tables = _forward_tables(scene, alpha) if scene.n_splats else None
    if tables is None:
        img[:] = bg
        return img.reshape(scene.height, scene.width, 3)

    w_row = tables["a"] * tables["t_excl"] * tables["gate"]
    c_row = color[tables["splat"]]
    for ch in range(3):
        img[:, ch] = np.bincount(
            tables["pixel"], weights=w_row * c_row[:, ch], minlength=hw
        )

    bg_weight = np.ones(hw)
    bg_weight[tables["seg_pixel"]] = tables["t_final"]
    img += bg_weight[:, None] * bg
    return img.reshape(scene.height, scene.width, 3)


def composite_backward(
    scene: SplatScene,
    color: np.ndarray,
    alpha: np.ndarray,
    dl_dimage: np.ndarray,
    background=WHITE,
    n_sources: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of ``composite`` w.r.t. per-kernel color and opacity logit.

    For an active row i at one pixel,

        dC/da'_i = c_i T_i - S_i / (1 - a'_i)

    where T_i is the transmittance in front of i and S_i collects
    everything composited behind i, including the background term.
    Gates are constants; skipped, terminated, and clamped contributions
    get zero gradient.  Accumulation order is fixed (row order, then
    kernel index), so results are deterministic.
    """
    if n_sources is None:
        n_sources = int(scene.source_index.max()) + 1 if scene.n_splats else 0
    dcolor = np.zeros((n_sources, 3))
    dlogit = np.zeros(n_sources)
    if scene.n_splats == 0:
        return dcolor, dlogit
    tables = _forward_tables(scene, alpha)
    if tables is None:
        return dcolor, dlogit

    bg = np.asarray(background, dtype=np.float64)
    a = tables["a"]
    gate = tables["gate"]
    t_excl = tables["t_excl"]
    splat = tables["splat"]
    starts = tables["starts"]

    w_row = a * t_excl * gate
    c_row = color[splat]
    contrib = w_row[:, None] * c_row

    pre = np.cumsum(contrib, axis=0)
    seg_base = pre[starts] - contrib[starts]
    seg_total = np.add.reduceat(contrib, starts, axis=0)
    lengths = tables["lengths"]
    suffix = np.repeat(seg_total + seg_base, lengths, axis=0) - pre
    s_row = suffix + np.repeat(tables["t_final"], lengths)[:, None] * bg

    grad_pix = dl_dimage.reshape(-1, 3)[tables["pixel"]]

    dcolor_splat = np.zeros((scene.n_splats, 3))
    np.add.at(dcolor_splat, splat, grad_pix * w_row[:, None])

    da_row = gate * (
        (grad_pix * c_row).sum(axis=1) * t_excl
        - (grad_pix * s_row).sum(axis=1) / (1.0 - a)
    )
    dalpha_row = da_row * tables["gauss"] * ~tables["clamped"]
    dalpha_splat = np.zeros(scene.n_splats)
    np.add.at(dalpha_splat, splat, dalpha_row)

    alpha_splat = alpha
    dlogit_splat = dalpha_splat * alpha_splat * (1.0 - alpha_splat)

    np.add.at(dcolor, scene.source_index, dcolor_splat)
    np.add.at(dlogit, scene.source_index, dlogit_splat)
    return dcolor, dlogit


def render(splats: Splat2D, camera: Camera, background=WHITE) -> np.ndarray:
    """Composite a splat batch into a float32 (H, W, 3) image in [0, 1]."""
    img = render64(splats, camera, background)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def render64(splats: Splat2D, camera: Camera, background=WHITE) -> np.ndarray:
    """Full-precision render, bit-identical to the trainer's forward pass.

    Loss terms compare renders against renders; mixing precisions there
    turns float dust into full-size L1 sign gradients.
    """
    scene = build_scene(splats, camera)
    color = splats.color[scene.splat_perm] if len(splats) else splats.color
    alpha = splats.opacity[scene.splat_perm] if len(splats) else splats.opacity
    return composite(scene, color, alpha, background)


def render_backward(
    splats: Splat2D,
    camera: Camera,
    dl_dimage: np.ndarray,
    background=WHITE,
    n_sources: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (dL/dcolor, dL/dopacity_logit) indexed by source kernel."""
    scene = build_scene(splats, camera)
    color = splats.color[scene.splat_perm] if len(splats) else splats.color
    alpha = splats.opacity[scene.splat_perm] if len(splats) else splats.opacity
    if n_sources is None and len(splats):
        n_sources = int(splats.source_index.max()) + 1
    return composite_backward(
        scene, color, alpha, np.asarray(dl_dimage, dtype=np.float64), background, n_sources
    )
