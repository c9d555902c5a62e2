"""Two-stage appearance optimization.

Geometry (position, rotation, scale) is frozen throughout; only kernel
color and opacity logits receive Adam updates.  The coarse stage is
supervised by UV-texture queries, the refinement stage by a guidance
provider perturbing the current render.  Per-view splat geometry and
g-buffers are cached once because nothing the optimizer touches can
change them.

Losses (per-pixel-per-channel means over the active region, so the
weights are resolution independent):

    makeup      mean_{mask}     |I_G  - I_r|  (+ optional perceptual slot)
    restriction mean_{~mask&cov}|I_ID - I_r|
    total       lambda1 * (makeup + perceptual) + lambda2 * restriction
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .avatar import AvatarModel, MeshPose, pose_kernels
from .camera import Camera
from .errors import NumericalError
from .guidance import (
    GuidanceRequest,
    MaskSpec,
    make_mask,
    sample_refine_timestep,
)
from .meshraster import rasterize_mesh
from .splat import (
    WHITE,
    build_scene,
    composite,
    composite_backward,
    project_gaussians,
)
from .ssim import masked_ssim_and_grad
from .uvbake import UvTexture, query

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lambda1: float = 10.0
    lambda2: float = 10.0
    lr: float = 1e-3
    lr_final: float | None = None  # geometric decay target; None = constant
    coarse_iters: int = 10_000
    refine_iters: int = 3_000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    batch: int = 1  # one (pose, camera) pair per iteration
    perceptual_weight: float = 0.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.perceptual_weight) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.coarse_iters < 0 or self.refine_iters < 0:
            raise ValueError("iteration budgets must be non-negative")
        if self.batch != 1:
            raise ValueError("only batch=1 is supported")

    def lr_at(self, iteration: int, total: int) -> float:
        """L1 gradients keep a constant magnitude, so Adam dithers at the
        learning-rate scale near the optimum; a geometric decay converges
        the last iterations instead of oscillating."""
        if self.lr_final is None or total <= 1:
            return self.lr
        frac = iteration / (total - 1)
        return float(self.lr * (self.lr_final / self.lr) ** frac)


@dataclass
class LossBreakdown:
    makeup: float
    res: float
    perceptual: float
    total: float


@dataclass
class TrainRecord:
    iteration: int
    stage: str
    pose_id: str
    camera_id: str
    makeup: float
    res: float
    total: float


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


# post-step clamps keep parameters in their legal ranges
_CLAMPS = {"color": (0.0, 1.0), "opacity_logit": (-10.0, 10.0)}


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict:
    """Bias-corrected Adam update, in place; returns the params dict."""
    state.step += 1
    t = state.step
    for key, p in params.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if key in _CLAMPS:
            lo, hi = _CLAMPS[key]
            np.clip(p, lo, hi, out=p)
    return params


def makeup_loss(
    i_g: np.ndarray,
    i_r: np.ndarray,
    mask: np.ndarray,
    perceptual_weight: float = 0.0,
) -> tuple[float, float, np.ndarray]:
    """(l1 term, weighted perceptual term, dL/dI_r).

    The scalar loss is the sum of the two terms.  The mask is expected
    to already exclude uncovered pixels; an empty mask yields zero loss
    and zero gradient.
    """
    mask = mask.astype(bool)
    grad = np.zeros_like(i_r, dtype=np.float64)
    if not mask.any():
        log.debug("makeup_loss: empty mask, returning zero loss")
        return 0.0, 0.0, grad
    n = int(mask.sum()) * i_r.shape[2]
    diff = np.asarray(i_r, np.float64)[mask] - np.asarray(i_g, np.float64)[mask]
    l1 = float(np.abs(diff).sum() / n)
    grad[mask] = np.sign(diff) / n

    perceptual = 0.0
    if perceptual_weight > 0.0:
        mg = np.asarray(i_g, np.float64) * mask[..., None]
        mr = np.asarray(i_r, np.float64) * mask[..., None]
        ssim_value, dssim = masked_ssim_and_grad(mg, mr, mask)
        perceptual = perceptual_weight * (1.0 - ssim_value)
        grad += perceptual_weight * (-dssim) * mask[..., None]
    return l1, perceptual, grad


def restriction_loss(
    i_id: np.ndarray,
    i_r: np.ndarray,
    mask: np.ndarray,
    coverage: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean L1 over covered non-mask pixels, anchoring the identity."""
    active = ~mask.astype(bool)
    if coverage is not None:
        active &= coverage.astype(bool)
    grad = np.zeros_like(i_r, dtype=np.float64)
    if not active.any():
        return 0.0, grad
    n = int(active.sum()) * i_r.shape[2]
    diff = np.asarray(i_r, np.float64)[active] - np.asarray(i_id, np.float64)[active]
    loss = float(np.abs(diff).sum() / n)
    grad[active] = np.sign(diff) / n
    return loss, grad


def total_loss(
    makeup: float, res: float, perceptual: float, config: TrainConfig
) -> LossBreakdown:
    total = config.lambda1 * (makeup + perceptual) + config.lambda2 * res
    return LossBreakdown(makeup=makeup, res=res, perceptual=perceptual, total=total)


@dataclass
class _ViewCache:
    """Everything per (pose, camera) that frozen geometry pins down."""

    pose_id: str
    camera_id: str
    scene: object
    gbuffer: object
    mask_region: np.ndarray      # region-label mask (within mesh coverage)
    identity: np.ndarray
    guidance: np.ndarray | None  # fixed target, when the stage has one
    mask_active: np.ndarray      # mask actually used by the makeup loss


def _freeze_appearance(model: AvatarModel) -> AvatarModel:
    return model.copy()


def _build_view_cache(
    model: AvatarModel,
    original: AvatarModel,
    poses: list[MeshPose],
    cameras: list[Camera],
    mask_spec: MaskSpec,
    background,
    texture: UvTexture | None,
    direct: bool = False,
) -> dict:
    """Project splat geometry, rasterize, and render identities once.

    ``direct`` supervises every covered pixel with the guidance image and
    leaves nothing for the restriction term (the mask-free baseline).
    """
    cache = {}
    for pi, pose in enumerate(poses):
        world = pose_kernels(model, pose)
        for ci, cam in enumerate(cameras):
            splats = project_gaussians(world, cam)
            scene = build_scene(splats, cam)
            gb = rasterize_mesh(model.mesh, pose, cam)
            mask_region, identity = make_mask(
                original, pose, cam, mask_spec, background, gbuffer=gb
            )
            if direct:
                mask_region = gb.coverage.copy()
            guidance = None
            mask_active = mask_region
            if texture is not None:
                guidance, uv_cov = query(
                    texture, model.mesh, pose, cam, background, gbuffer=gb
                )
                mask_active = mask_region & uv_cov
            cache[(pi, ci)] = _ViewCache(
                pose_id=pose.pose_id,
                camera_id=cam.camera_id,
                scene=scene,
                gbuffer=gb,
                mask_region=mask_region,
                identity=identity,
                guidance=guidance,
                mask_active=mask_active,
            )
    return cache


def _optimize(
    model: AvatarModel,
    poses: list[MeshPose],
    cameras: list[Camera],
    config: TrainConfig,
    mask_spec: MaskSpec,
    stage: str,
    iterations: int,
    guidance_fn,
    background=WHITE,
    texture: UvTexture | None = None,
    direct: bool = False,
    on_iteration=None,
) -> tuple[AvatarModel, list[TrainRecord]]:
    """Shared optimization loop over seeded (pose, camera) draws.

    guidance_fn(view_cache, render, rng) -> guidance image for this
    iteration; for the coarse stage the cached texture query is used
    directly.
    """
    if not direct and not mask_spec.makeup_labels:
        raise ValueError("makeup optimization needs a non-empty MaskSpec")
    rng = np.random.default_rng(config.seed)
    original = _freeze_appearance(model)
    cache = _build_view_cache(
        model, original, poses, cameras, mask_spec, background, texture, direct
    )
    n_kernels = len(model.kernels)
    params = {"color": model.kernels.color, "opacity_logit": model.kernels.opacity_logit}
    state = AdamState.for_params(params)
    records = []

    for it in range(iterations):
        pi = int(rng.integers(len(poses)))
        ci = int(rng.integers(len(cameras)))
        view = cache[(pi, ci)]

        alpha_kernel = model.kernels.opacity()
        color_splat = view.scene.gather(model.kernels.color)
        alpha_splat = view.scene.gather(alpha_kernel)
        img = composite(view.scene, color_splat, alpha_splat, background)

        if view.guidance is not None:
            i_g = view.guidance
        else:
            i_g = guidance_fn(view, img, rng)

        l1, perc, g_makeup = makeup_loss(
            i_g, img, view.mask_active, config.perceptual_weight
        )
        res, g_res = restriction_loss(
            view.identity, img, view.mask_region, coverage=view.gbuffer.coverage
        )
        breakdown = total_loss(l1, res, perc, config)
        if not np.isfinite(breakdown.total):
            raise NumericalError(
                f"non-finite loss at iteration {it} ({stage}): {breakdown}"
            )

        dl_dimage = config.lambda1 * g_makeup + config.lambda2 * g_res
        dcolor, dlogit = composite_backward(
            view.scene,
            color_splat,
            alpha_splat,
            dl_dimage,
            background,
            n_sources=n_kernels,
        )
        adam_step(
            params,
            {"color": dcolor, "opacity_logit": dlogit},
            state,
            config.lr_at(it, iterations),
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        )

        rec = TrainRecord(
            iteration=it,
            stage=stage,
            pose_id=view.pose_id,
            camera_id=view.camera_id,
            makeup=breakdown.makeup + breakdown.perceptual,
            res=breakdown.res,
            total=breakdown.total,
        )
        records.append(rec)
        if on_iteration is not None:
            on_iteration(rec, model)
    return model, records


def run_coarse(
    model: AvatarModel,
    texture: UvTexture,
    poses: list[MeshPose],
    cameras: list[Camera],
    config: TrainConfig,
    mask_spec: MaskSpec,
    background=WHITE,
    on_iteration=None,
) -> tuple[AvatarModel, list[TrainRecord]]:
    """Coarse stage: fit the avatar's appearance to UV-texture queries."""
    return _optimize(
        model,
        poses,
        cameras,
        config,
        mask_spec,
        stage="coarse",
        iterations=config.coarse_iters,
        guidance_fn=None,
        background=background,
        texture=texture,
        on_iteration=on_iteration,
    )


def run_refine(
    model: AvatarModel,
    provider,
    poses: list[MeshPose],
    cameras: list[Camera],
    config: TrainConfig,
    mask_spec: MaskSpec,
    background=WHITE,
    on_iteration=None,
) -> tuple[AvatarModel, list[TrainRecord]]:
    """Refinement stage: the provider sharpens each fresh render."""

    def guidance_fn(view, img, rng):
        request = GuidanceRequest(
            pose_id=view.pose_id,
            camera_id=view.camera_id,
            stage="refine",
            timestep=sample_refine_timestep(rng),
            base_render=img,
        )
        return provider.provide(request)

    return _optimize(
        model,
        poses,
        cameras,
        config,
        mask_spec,
        stage="refine",
        iterations=config.refine_iters,
        guidance_fn=guidance_fn,
        background=background,
        on_iteration=on_iteration,
    )


def run_per_view_guidance(
    model: AvatarModel,
    provider,
    poses: list[MeshPose],
    cameras: list[Camera],
    config: TrainConfig,
    mask_spec: MaskSpec | None = None,
    background=WHITE,
    iterations: int | None = None,
    direct: bool = True,
    on_iteration=None,
) -> tuple[AvatarModel, list[TrainRecord]]:
    """Ablation loop: optimize on per-view coarse guidance, bypassing the
    shared UV texture entirely.

    By default this is the mask-free baseline (every covered pixel is
    supervised by the guidance image, with no identity anchor); pass
    ``direct=False`` to keep the masked loss split.
    """

    def guidance_fn(view, img, rng):
        request = GuidanceRequest(
            pose_id=view.pose_id, camera_id=view.camera_id, stage="coarse"
        )
        return provider.provide(request)

    if mask_spec is None:
        mask_spec = MaskSpec(makeup_labels=frozenset())

    return _optimize(
        model,
        poses,
        cameras,
        config,
        mask_spec,
        stage="vanilla",
        iterations=config.coarse_iters if iterations is None else iterations,
        guidance_fn=guidance_fn,
        background=background,
        direct=direct,
        on_iteration=on_iteration,
    )
