"""Global UV texture baking and querying.

Baking bins every covered screen pixel into the texel under its
interpolated UV (nearest-bin assignment) and averages per view first,
then across views:

    texel = (1/N_obs) * sum_views  mean of that view's pixels in the bin

so views with many pixels in a bin do not outweigh views with few.
Unobserved texels near observed ones are filled by iterative
8-neighbor mean dilation; querying samples the texture bilinearly and
flags pixels whose entire bilinear footprint is unfilled.
"""

from dataclasses import dataclass, field

import numpy as np

from .avatar import MeshPose, TriangleMesh
from .camera import Camera
from .errors import MismatchedInputs, UnfinalizedTexture
from .meshraster import GBuffer, rasterize_mesh

DEFAULT_RESOLUTION = 256
DEFAULT_NUM_VIEWS = 16
DEFAULT_DILATION_ITERS = 8


@dataclass
class BakeConfig:
    num_views: int = DEFAULT_NUM_VIEWS
    canonical_pose_id: str = "canonical"
    camera_ids: tuple = ()
    dilation_iters: int = DEFAULT_DILATION_ITERS
    resolution: int = DEFAULT_RESOLUTION

    def __post_init__(self):
        self.camera_ids = tuple(self.camera_ids)
        if self.num_views < 1:
            raise ValueError("num_views must be >= 1")
        if self.camera_ids and len(self.camera_ids) != self.num_views:
            raise ValueError("camera list length must equal num_views")


@dataclass
class UvTexture:
    """Accumulating UV texture; ``finalized`` appears after baking.

    rgb_sum[t] is the sum over views of that view's mean color in texel
    t; count[t] is the number of views that observed t; observed texels
    satisfy finalized = rgb_sum / count exactly.  ``filled`` additionally
    marks texels painted by dilation.
    """

    resolution: int = DEFAULT_RESOLUTION
    rgb_sum: np.ndarray = None
    count: np.ndarray = None
    finalized: np.ndarray | None = None
    filled: np.ndarray | None = None

    def __post_init__(self):
        r = self.resolution
        if self.rgb_sum is None:
            self.rgb_sum = np.zeros((r, r, 3))
        if self.count is None:
            self.count = np.zeros((r, r), dtype=np.int64)

    @property
    def observed(self) -> np.ndarray:
        return self.count > 0


def uv_to_texel(uv: np.ndarray, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-bin texel indices (h, w) = (floor(u*res), floor(v*res))."""
    h = np.clip(np.floor(uv[..., 0] * resolution).astype(np.int64), 0, resolution - 1)
    w = np.clip(np.floor(uv[..., 1] * resolution).astype(np.int64), 0, resolution - 1)
    return h, w


def bake(
    guidance_images: list[np.ndarray],
    gbuffers: list[GBuffer],
    config: BakeConfig,
) -> UvTexture:
    """Accumulate N guidance views into a finalized, hole-filled texture."""
    if len(guidance_images) != config.num_views or len(gbuffers) != config.num_views:
        raise MismatchedInputs(
            f"expected {config.num_views} image/gbuffer pairs, got "
            f"{len(guidance_images)}/{len(gbuffers)}"
        )
    res = config.resolution
    tex = UvTexture(resolution=res)
    for img, gb in zip(guidance_images, gbuffers):
        img = np.asarray(img, dtype=np.float64)
        if img.shape[:2] != gb.triangle_id.shape:
            raise MismatchedInputs("image and gbuffer dimensions differ")
        cov = gb.coverage
        th, tw = uv_to_texel(gb.uv[cov], res)
        view_sum = np.zeros((res, res, 3))
        view_cnt = np.zeros((res, res), dtype=np.int64)
        np.add.at(view_sum, (th, tw), img[cov])
        np.add.at(view_cnt, (th, tw), 1)
        hit = view_cnt > 0
        tex.rgb_sum[hit] += view_sum[hit] / view_cnt[hit, None]
        tex.count[hit] += 1

    finalize(tex, dilation_iters=config.dilation_iters)
    return tex


def finalize(tex: UvTexture, dilation_iters: int = DEFAULT_DILATION_ITERS) -> UvTexture:
    """Mean the accumulators and dilate into unobserved neighbors."""
    obs = tex.observed
    finalized = np.zeros_like(tex.rgb_sum)
    finalized[obs] = tex.rgb_sum[obs] / tex.count[obs, None]
    filled = obs.copy()

    for _ in range(dilation_iters):
        if filled.all():
            break
        nb_sum = _neighbor_sum(finalized * filled[..., None])
        nb_cnt = _neighbor_sum(filled.astype(np.float64)[..., None])[..., 0]
        grow = ~filled & (nb_cnt > 0)
        if not grow.any():
            break
        finalized[grow] = nb_sum[grow] / nb_cnt[grow, None]
        filled |= grow

    tex.finalized = finalized
    tex.filled = filled
    return tex


def _neighbor_sum(img: np.ndarray) -> np.ndarray:
    """Sum over the 8-neighborhood (zero beyond the border)."""
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros_like(img)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            out += padded[1 + dy : 1 + dy + img.shape[0], 1 + dx : 1 + dx + img.shape[1]]
    return out


def sample_nearest(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Texel values under nearest-bin lookup; uv (..., 2) -> (..., 3)."""
    res = texture.shape[0]
    h, w = uv_to_texel(uv, res)
    return texture[h, w]


def sample_bilinear(
    texture: np.ndarray, uv: np.ndarray, valid: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear lookup at texel centers; weights renormalize over valid taps.

    Returns (colors, ok) where ok is False when every tap is invalid.
    """
    res = texture.shape[0]
    if valid is None:
        valid = np.ones((res, res), dtype=bool)
    tu = uv[..., 0] * res - 0.5
    tv = uv[..., 1] * res - 0.5
    h0 = np.floor(tu).astype(np.int64)
    w0 = np.floor(tv).astype(np.int64)
    fu = tu - h0
    fv = tv - w0

    colors = np.zeros(uv.shape[:-1] + (3,))
    weight = np.zeros(uv.shape[:-1])
    for dh, wu in ((0, 1.0 - fu), (1, fu)):
        for dw, wv in ((0, 1.0 - fv), (1, fv)):
            hh = np.clip(h0 + dh, 0, res - 1)
            ww = np.clip(w0 + dw, 0, res - 1)
            tap_w = wu * wv * valid[hh, ww]
            colors += tap_w[..., None] * texture[hh, ww]
            weight += tap_w
    ok = weight > 1e-12
    colors[ok] /= weight[ok, None]
    return colors, ok


def query(
    texture: UvTexture,
    mesh: TriangleMesh,
    pose: MeshPose,
    camera: Camera,
    background=(1.0, 1.0, 1.0),
    gbuffer: GBuffer | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Render the texture through the mesh for one pose and camera.

    Returns (image, coverage): covered pixels sample the texture
    bilinearly at their interpolated UV; pixels whose whole bilinear
    footprint is unfilled are flagged uncovered and get the background.
    """
    if texture.finalized is None:
        raise UnfinalizedTexture("bake or finalize the texture before querying")
    if gbuffer is None:
        gbuffer = rasterize_mesh(mesh, pose, camera)
    h, w = camera.height, camera.width
    img = np.tile(np.asarray(background, dtype=np.float64), (h, w, 1))
    cov = gbuffer.coverage
    colors, ok = sample_bilinear(texture.finalized, gbuffer.uv[cov], texture.filled)
    covered = np.zeros((h, w), dtype=bool)
    covered[cov] = ok
    img[cov] = np.where(ok[:, None], colors, img[cov])
    return img, covered


def textured_mesh_render(
    mesh: TriangleMesh,
    pose: MeshPose,
    camera: Camera,
    texture: np.ndarray,
    mode: str = "nearest",
    background=(1.0, 1.0, 1.0),
    gbuffer: GBuffer | None = None,
) -> np.ndarray:
    """Plain textured rasterization; the test oracle for bake/query paths."""
    if gbuffer is None:
        gbuffer = rasterize_mesh(mesh, pose, camera)
    h, w = camera.height, camera.width
    img = np.tile(np.asarray(background, dtype=np.float64), (h, w, 1))
    cov = gbuffer.coverage
    if mode == "nearest":
        img[cov] = sample_nearest(texture, gbuffer.uv[cov])
    elif mode == "bilinear":
        colors, ok = sample_bilinear(texture, gbuffer.uv[cov])
        img[cov] = np.where(ok[:, None], colors, img[cov])
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    return img
