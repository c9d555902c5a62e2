"""Sources of guidance images and makeup masks.

Two providers ship with the package: a manifest-backed file provider
for supervision generated offline (e.g. a diffusion editor), and a
deterministic procedural provider that blends flat colors or UV
patterns over labeled mesh regions — the desk-scale stand-in used by
the oracles and the toy pipeline.  Masks come straight from mesh
region labels through the g-buffer, so they are exact and
pose-consistent by construction.
"""

import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .avatar import AvatarModel, MeshPose, pose_kernels
from .camera import Camera
from .errors import DimensionMismatch, MismatchedInputs, MissingGuidance
from .meshraster import GBuffer, rasterize_mesh
from .splat import project_gaussians, render64
from .uvbake import sample_nearest

TIMESTEP_MIN = 20
TIMESTEP_MAX = 400
REFINE_LEAK_TOL = 0.02  # mean L1 allowed outside the mask for refinements


@dataclass
class GuidanceRequest:
    pose_id: str
    camera_id: str
    stage: str  # "coarse" | "refine"
    timestep: int | None = None
    base_render: np.ndarray | None = None

    def __post_init__(self):
        if self.stage not in ("coarse", "refine"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.stage == "refine":
            if self.timestep is None or not (
                TIMESTEP_MIN <= int(self.timestep) <= TIMESTEP_MAX
            ):
                raise ValueError(
                    f"refine timestep must lie in [{TIMESTEP_MIN}, {TIMESTEP_MAX}]"
                )
            if self.base_render is None:
                raise ValueError("refine requests carry the current render")


@dataclass
class GuidanceSample:
    guidance: np.ndarray   # (H, W, 3)
    mask: np.ndarray       # (H, W) binary
    identity: np.ndarray   # (H, W, 3)
    coverage: np.ndarray   # (H, W) binary

    def __post_init__(self):
        shapes = {
            self.guidance.shape[:2],
            self.mask.shape,
            self.identity.shape[:2],
            self.coverage.shape,
        }
        if len(shapes) != 1:
            raise MismatchedInputs("guidance sample buffers disagree in size")
        if np.any(self.mask & ~self.coverage):
            raise MismatchedInputs("mask must be contained in coverage")


@dataclass
class RegionOverlay:
    color: tuple = (1.0, 0.0, 0.0)
    beta: float = 1.0
    pattern: np.ndarray | None = None       # optional UV-space color image
    beta_pattern: np.ndarray | None = None  # optional UV-space blend map in [0, 1]

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("blend strength beta must lie in [0, 1]")
        if self.beta_pattern is not None:
            bp = np.asarray(self.beta_pattern, dtype=np.float64)
            if bp.min() < 0.0 or bp.max() > 1.0:
                raise ValueError("beta_pattern values must lie in [0, 1]")
            self.beta_pattern = bp


@dataclass
class ProceduralMakeupSpec:
    """Per-region-label overlay recipe; labels absent here pass through."""

    overlays: dict = field(default_factory=dict)  # label -> RegionOverlay


@dataclass
class MaskSpec:
    """Region labels counted as makeup; must be non-empty for makeup runs
    (the trainer enforces that), but an empty set is a legal way to ask
    for an all-zero mask."""

    makeup_labels: frozenset

    def __post_init__(self):
        self.makeup_labels = frozenset(int(v) for v in self.makeup_labels)


def sample_refine_timestep(rng: np.random.Generator) -> int:
    """Uniform draw from the integer timestep grid [20, 400]."""
    return int(rng.integers(TIMESTEP_MIN, TIMESTEP_MAX + 1))


def _smooth_noise(rng: np.random.Generator, resolution: int, scale: int) -> np.ndarray:
    """Zero-mean noise field with a correlation length of ~scale texels."""
    cells = max(resolution // max(scale, 1), 2)
    coarse = rng.standard_normal((cells, cells))
    idx = (np.arange(resolution) + 0.5) / resolution * cells - 0.5
    i0 = np.clip(np.floor(idx).astype(np.int64), 0, cells - 1)
    i1 = np.clip(i0 + 1, 0, cells - 1)
    f = np.clip(idx - np.floor(idx), 0.0, 1.0)
    a = coarse[np.ix_(i0, i0)]
    b = coarse[np.ix_(i0, i1)]
    c = coarse[np.ix_(i1, i0)]
    d = coarse[np.ix_(i1, i1)]
    fy, fx = f[:, None], f[None, :]
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)


def parse_manifest(path) -> dict:
    """One record per line: pose_id, camera_id, stage, path (relative)."""
    path = Path(path)
    base = path.parent
    table = {}
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise MismatchedInputs(f"bad manifest record: {raw!r}")
        pose_id, camera_id, stage, rel = parts
        table[(pose_id, camera_id, stage)] = base / rel
    return table


class FileGuidanceProvider:
    """Serves pre-generated guidance images listed in a manifest.

    Images decode lazily; a small LRU cache bounds memory no matter how
    many records the manifest holds.
    """

    def __init__(self, manifest_path, expected_size=None, cache_capacity: int = 32):
        self.table = parse_manifest(manifest_path)
        self.expected_size = expected_size  # (width, height) or None
        self.cache_capacity = cache_capacity
        self._cache: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.table)

    def provide(self, request: GuidanceRequest) -> np.ndarray:
        key = (request.pose_id, request.camera_id, request.stage)
        if key not in self.table:
            raise MissingGuidance(f"no guidance for {key}")
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        from .fileio import load_png

        img = load_png(self.table[key])
        if self.expected_size is not None:
            w, h = self.expected_size
            if img.shape[1] != w or img.shape[0] != h:
                raise DimensionMismatch(
                    f"guidance {key} is {img.shape[1]}x{img.shape[0]}, "
                    f"expected {w}x{h}"
                )
        with self._lock:
            self._cache[key] = img
            self._cache.move_to_end(key)
            while len(self._cache) > self.cache_capacity:
                self._cache.popitem(last=False)
        return img


def provide_procedural(
    request: GuidanceRequest,
    spec: ProceduralMakeupSpec,
    identity: np.ndarray,
    gbuffer: GBuffer,
) -> np.ndarray:
    """Blend the region overlays onto an identity render.

    out = (1 - beta) * identity + beta * overlay, per labeled region;
    flat color by default, UV-sampled pattern when one is given.
    """
    if identity.shape[:2] != gbuffer.triangle_id.shape:
        raise MismatchedInputs("identity render and gbuffer dimensions differ")
    out = np.array(identity, dtype=np.float64, copy=True)
    for label in sorted(spec.overlays):
        ov = spec.overlays[label]
        sel = (gbuffer.region_label == label) & gbuffer.coverage
        if not sel.any():
            continue
        if ov.pattern is not None:
            target = sample_nearest(ov.pattern, gbuffer.uv[sel])
        else:
            target = np.asarray(ov.color, dtype=np.float64)
        beta = ov.beta
        if ov.beta_pattern is not None:
            uv = gbuffer.uv[sel]
            res = ov.beta_pattern.shape[0]
            h = np.clip((uv[:, 0] * res).astype(np.int64), 0, res - 1)
            w = np.clip((uv[:, 1] * res).astype(np.int64), 0, res - 1)
            beta = ov.beta * ov.beta_pattern[h, w, None]
        out[sel] = (1.0 - beta) * out[sel] + beta * target
    return out


class ProceduralProvider:
    """Deterministic provider over an avatar: the desk-scale oracle.

    Coarse requests overlay the spec onto a fresh identity render;
    refine requests overlay it onto the supplied base render, so a
    beta=0 spec is the identity refinement and beta=1 overlays are
    idempotent.

    Generative editors do not produce view- or expression-consistent
    images; the coherent-baking stage exists to absorb exactly that.  To
    emulate it, ``view_color_jitter`` shifts each region's overlay color
    per camera, and ``pose_uv_shift``/``pose_color_jitter`` misalign and
    recolor the makeup for every non-canonical pose (edits align well at
    the neutral expression and drift elsewhere).  All perturbations are
    seeded by a CRC of the pose/camera ids, so repeated requests stay
    bit-identical.
    """

    def __init__(
        self,
        spec: ProceduralMakeupSpec,
        model: AvatarModel,
        poses: dict,
        cameras: dict,
        background=(1.0, 1.0, 1.0),
        view_color_jitter: float = 0.0,
        detail_noise: float = 0.0,
        detail_scale: int = 6,
        contour_shift: float = 0.0,
        pose_uv_shift: float = 0.0,
        pose_color_jitter: float = 0.0,
        per_request_noise: bool = False,
        canonical_pose_id: str = "canonical",
    ):
        self.spec = spec
        self.model = model
        self.poses = poses
        self.cameras = cameras
        self.background = background
        self.view_color_jitter = view_color_jitter
        self.detail_noise = detail_noise
        self.detail_scale = detail_scale
        self.contour_shift = contour_shift
        self.pose_uv_shift = pose_uv_shift
        self.pose_color_jitter = pose_color_jitter
        # a generative editor samples a fresh output on every call; with
        # per-request noise the perturbation is redrawn each time (still a
        # deterministic sequence, keyed by an internal counter)
        self.per_request_noise = per_request_noise
        self.canonical_pose_id = canonical_pose_id
        self._request_counter = 0
        self._gbuffers: dict = {}
        self._identities: dict = {}
        self._view_specs: dict = {}

    def _spec_for_request(self, pose_id: str, camera_id: str) -> ProceduralMakeupSpec:
        canonical = pose_id == self.canonical_pose_id
        color_jitter = self.view_color_jitter + (
            0.0 if canonical else self.pose_color_jitter
        )
        uv_shift = 0.0 if canonical else self.pose_uv_shift
        if color_jitter == 0.0 and uv_shift == 0.0 and self.detail_noise == 0.0:
            return self.spec
        if self.per_request_noise:
            self._request_counter += 1
            salt = f"#{self._request_counter}"
        else:
            salt = ""
        key = (pose_id, camera_id, salt)
        if key in self._view_specs:
            return self._view_specs[key]
        overlays = {}
        for label, ov in self.spec.overlays.items():
            seed = zlib.crc32(
                f"{pose_id}/{camera_id}/{label}{salt}".encode()
            ) & 0xFFFFFFFF
            rng = np.random.default_rng(seed)
            color = np.clip(
                np.asarray(ov.color) + color_jitter * rng.uniform(-1.0, 1.0, 3),
                0.0,
                1.0,
            )
            beta_pattern = ov.beta_pattern
            if beta_pattern is not None and uv_shift > 0.0:
                res = beta_pattern.shape[0]
                dh, dw = np.rint(
                    uv_shift * res * rng.uniform(-1.0, 1.0, 2)
                ).astype(int)
                beta_pattern = np.roll(beta_pattern, (dh, dw), axis=(0, 1))
            pattern = ov.pattern
            if self.detail_noise > 0.0 and beta_pattern is not None:
                # bright detail patches (gloss/highlight) at view-specific
                # spots: the classic generator inconsistency
                res = beta_pattern.shape[0]
                field = _smooth_noise(rng, res, self.detail_scale)
                patch = field > 1.0
                base = np.tile(color, (res, res, 1))
                bright = np.clip(
                    base + self.detail_noise * (1.0 - base), 0.0, 1.0
                )
                pattern = np.where(patch[..., None], bright, base)
            overlays[label] = replace(
                ov, color=tuple(color), pattern=pattern, beta_pattern=beta_pattern
            )
        spec = ProceduralMakeupSpec(overlays=overlays)
        if not salt:  # fresh-per-request specs are never reused
            self._view_specs[key] = spec
        return spec

    def _gbuffer(self, pose_id: str, camera_id: str) -> GBuffer:
        key = (pose_id, camera_id)
        if key not in self._gbuffers:
            self._gbuffers[key] = rasterize_mesh(
                self.model.mesh, self.poses[pose_id], self.cameras[camera_id]
            )
        return self._gbuffers[key]

    def _identity(self, pose_id: str, camera_id: str) -> np.ndarray:
        key = (pose_id, camera_id)
        if key not in self._identities:
            world = pose_kernels(self.model, self.poses[pose_id])
            splats = project_gaussians(world, self.cameras[camera_id])
            self._identities[key] = render64(
                splats, self.cameras[camera_id], self.background
            )
        return self._identities[key]

    def provide(self, request: GuidanceRequest) -> np.ndarray:
        gb = self._gbuffer(request.pose_id, request.camera_id)
        spec = self._spec_for_request(request.pose_id, request.camera_id)
        if request.stage == "refine":
            base = np.asarray(request.base_render, dtype=np.float64)
            return provide_procedural(request, spec, base, gb)
        identity = self._identity(request.pose_id, request.camera_id)
        out = provide_procedural(request, spec, identity, gb)
        if self.contour_shift > 0.0:
            # generated images rarely line up with the render that prompted
            # them; shift the whole guidance a few pixels per view
            seed = zlib.crc32(
                f"{request.pose_id}/{request.camera_id}/contour".encode()
            ) & 0xFFFFFFFF
            rng = np.random.default_rng(seed)
            h = out.shape[0]
            dy, dx = np.rint(
                self.contour_shift * h * rng.uniform(-1.0, 1.0, 2)
            ).astype(int)
            out = np.roll(out, (dy, dx), axis=(0, 1))
        return out


def refine(request: GuidanceRequest, provider) -> np.ndarray:
    """Ask the provider to sharpen the current render at timestep t."""
    if request.stage != "refine":
        raise ValueError("refine needs a refine-stage request")
    return provider.provide(request)


def refinement_respects_mask(
    base: np.ndarray, refined: np.ndarray, mask: np.ndarray, tol: float = REFINE_LEAK_TOL
) -> bool:
    """True when the refinement left the non-mask region essentially alone."""
    outside = ~mask.astype(bool)
    if not outside.any():
        return True
    leak = np.abs(
        np.asarray(refined, np.float64)[outside] - np.asarray(base, np.float64)[outside]
    ).mean()
    return bool(leak < tol)


def make_mask(
    original: AvatarModel,
    pose: MeshPose,
    camera: Camera,
    mask_spec: MaskSpec | None,
    background=(1.0, 1.0, 1.0),
    gbuffer: GBuffer | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Binary makeup mask and the paired identity render.

    The mask selects covered pixels whose region label belongs to the
    spec; the identity image is rendered from the original (unedited)
    avatar at the same pose and camera.
    """
    if gbuffer is None:
        gbuffer = rasterize_mesh(original.mesh, pose, camera)
    if mask_spec is None or not mask_spec.makeup_labels:
        mask = np.zeros(gbuffer.triangle_id.shape, dtype=bool)
    else:
        mask = (
            np.isin(gbuffer.region_label, sorted(mask_spec.makeup_labels))
            & gbuffer.coverage
        )
    world = pose_kernels(original, pose)
    splats = project_gaussians(world, camera)
    identity = render64(splats, camera, background)
    return mask, identity
