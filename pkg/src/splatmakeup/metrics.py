"""Desk-scale evaluation: masked fidelity, identity drift, and the
cross-view consistency score.

The consistency score reprojects each rendered view into UV texel bins
through its g-buffer, takes the per-view mean color per texel, and
reports the mean (over texels seen by at least two views) of the
per-texel standard deviation across views.  A perfectly view-consistent
appearance scores 0.
"""

from dataclasses import dataclass, field

import numpy as np

from .avatar import AvatarModel, MeshPose, pose_kernels
from .camera import Camera
from .errors import EmptyMask, InsufficientViews
from .meshraster import rasterize_mesh
from .splat import WHITE, project_gaussians, render
from .ssim import erode, ssim_map
from .uvbake import UvTexture, query, uv_to_texel

PSNR_CAP = 99.0


def masked_psnr_ssim(
    a: np.ndarray, b: np.ndarray, mask: np.ndarray, window: int = 7
) -> tuple[float, float]:
    """(PSNR, SSIM) over masked pixels of two [0, 1] images.

    PSNR uses the masked per-pixel-per-channel MSE and is capped at 99.
    SSIM windows are restricted to the mask interior (erosion by the
    window); when the interior is empty the masked pixels are used
    directly.
    """
    mask = mask.astype(bool)
    if not mask.any():
        raise EmptyMask("masked metrics need at least one masked pixel")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = float(((a[mask] - b[mask]) ** 2).mean())
    psnr = PSNR_CAP if mse == 0.0 else min(10.0 * np.log10(1.0 / mse), PSNR_CAP)

    interior = erode(mask, window)
    region = interior if interior.any() else mask
    ssim = float(ssim_map(a, b, window)[region].mean())
    return float(psnr), ssim


def identity_drift(
    original_render: np.ndarray,
    edited_render: np.ndarray,
    mask: np.ndarray,
    coverage: np.ndarray | None = None,
) -> float:
    """Mean L1 over covered non-mask pixels."""
    active = ~mask.astype(bool)
    if coverage is not None:
        active &= coverage.astype(bool)
    if not active.any():
        return 0.0
    a = np.asarray(original_render, np.float64)[active]
    b = np.asarray(edited_render, np.float64)[active]
    return float(np.abs(a - b).mean())


def uv_consistency_from_views(
    images: list[np.ndarray],
    gbuffers: list,
    resolution: int,
) -> float:
    """Consistency statistic from pre-rendered views and their g-buffers."""
    n_views = len(images)
    sums = np.zeros((n_views, resolution, resolution, 3))
    hits = np.zeros((n_views, resolution, resolution), dtype=np.int64)
    for i, (img, gb) in enumerate(zip(images, gbuffers)):
        cov = gb.coverage
        th, tw = uv_to_texel(gb.uv[cov], resolution)
        np.add.at(sums[i], (th, tw), np.asarray(img, np.float64)[cov])
        np.add.at(hits[i], (th, tw), 1)

    seen = hits > 0
    contributions = seen.sum(axis=0)
    usable = contributions >= 2
    if not usable.any():
        raise InsufficientViews("no texel is observed by two or more views")

    means = np.zeros_like(sums)
    means[seen] = sums[seen] / hits[seen][:, None]

    count = contributions[usable].astype(np.float64)
    m = np.where(seen[:, usable, None], means[:, usable, :], 0.0)
    mean_c = m.sum(axis=0) / count[:, None]
    var = ((m - mean_c[None]) ** 2 * seen[:, usable, None]).sum(axis=0) / (
        count[:, None] - 1.0
    )
    std = np.sqrt(var)
    return float(std.mean())


def uv_consistency(
    model: AvatarModel,
    poses: list[MeshPose],
    cameras: list[Camera],
    resolution: int,
    background=WHITE,
) -> float:
    """Render every (pose, camera) pair and score cross-view color spread."""
    images, gbuffers = [], []
    for pose in poses:
        world = pose_kernels(model, pose)
        for cam in cameras:
            splats = project_gaussians(world, cam)
            images.append(render(splats, cam, background).astype(np.float64))
            gbuffers.append(rasterize_mesh(model.mesh, pose, cam))
    return uv_consistency_from_views(images, gbuffers, resolution)


@dataclass
class ViewScore:
    pose_id: str
    camera_id: str
    psnr: float
    ssim: float
    drift: float


@dataclass
class EvalReport:
    views: list = field(default_factory=list)
    uv_consistency: float = 0.0

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([v.psnr for v in self.views])) if self.views else 0.0

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([v.ssim for v in self.views])) if self.views else 0.0

    @property
    def mean_drift(self) -> float:
        return float(np.mean([v.drift for v in self.views])) if self.views else 0.0

    def to_text(self) -> str:
        lines = ["pose camera psnr ssim drift"]
        for v in self.views:
            lines.append(
                f"{v.pose_id} {v.camera_id} {v.psnr:.4f} {v.ssim:.6f} {v.drift:.6f}"
            )
        lines.append(f"mean_psnr {self.mean_psnr:.4f}")
        lines.append(f"mean_ssim {self.mean_ssim:.6f}")
        lines.append(f"mean_drift {self.mean_drift:.6f}")
        lines.append(f"uv_consistency {self.uv_consistency:.6f}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        lines = []
        for v in self.views:
            key = f"{v.pose_id}.{v.camera_id}"
            lines.append(f"{key}.psnr = {v.psnr!r}")
            lines.append(f"{key}.ssim = {v.ssim!r}")
            lines.append(f"{key}.drift = {v.drift!r}")
        lines.append(f"mean_psnr = {self.mean_psnr!r}")
        lines.append(f"mean_ssim = {self.mean_ssim!r}")
        lines.append(f"mean_drift = {self.mean_drift!r}")
        lines.append(f"uv_consistency = {self.uv_consistency!r}")
        return "\n".join(lines) + "\n"


def evaluate(
    model: AvatarModel,
    original: AvatarModel,
    texture: UvTexture,
    poses: list[MeshPose],
    cameras: list[Camera],
    mask_spec,
    uv_resolution: int = 64,
    background=WHITE,
) -> EvalReport:
    """Per-view masked fidelity against the coherent guidance plus the
    cross-view consistency of the optimized avatar."""
    from .guidance import make_mask

    report = EvalReport()
    for pose in poses:
        world = pose_kernels(model, pose)
        for cam in cameras:
            gb = rasterize_mesh(model.mesh, pose, cam)
            splats = project_gaussians(world, cam)
            img = render(splats, cam, background).astype(np.float64)
            guidance, uv_cov = query(texture, model.mesh, pose, cam, background, gbuffer=gb)
            mask, ident = make_mask(original, pose, cam, mask_spec, background, gbuffer=gb)
            active = mask & uv_cov
            if active.any():
                psnr, ssim = masked_psnr_ssim(img, guidance, active)
            else:
                psnr, ssim = 0.0, 0.0
            drift = identity_drift(ident, img, mask, coverage=gb.coverage)
            report.views.append(
                ViewScore(pose.pose_id, cam.camera_id, psnr, ssim, drift)
            )
    report.uv_consistency = uv_consistency(
        model, poses, cameras, uv_resolution, background
    )
    return report
