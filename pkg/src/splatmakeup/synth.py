"""Deterministic synthetic head assets: a UV-unwrapped ellipsoid with
labeled makeup regions, procedural expression poses, a camera ring, and
surface-initialized Gaussian kernels.

Everything is a pure function of the seed, so the whole toy pipeline
can run with zero external assets and reproduce byte-identical files.
"""

import numpy as np

from .avatar import (
    AvatarModel,
    GaussianKernels,
    MeshPose,
    TriangleMesh,
    bind_kernels,
    triangle_frames,
)
from .camera import Camera, camera_ring, look_at
from .rotations import matrix_to_quat

LABEL_SKIN = 0
LABEL_LIPS = 1
LABEL_EYE_L = 2
LABEL_EYE_R = 3
LABEL_CHEEK_L = 4
LABEL_CHEEK_R = 5

REGION_NAMES = {
    LABEL_SKIN: "skin",
    LABEL_LIPS: "lips",
    LABEL_EYE_L: "eye_left",
    LABEL_EYE_R: "eye_right",
    LABEL_CHEEK_L: "cheek_left",
    LABEL_CHEEK_R: "cheek_right",
}

# (u, v) ellipse per region: center_u, center_v, radius_u, radius_v.
# u wraps longitude with the face front at u = 0.5; v runs pole to pole.
_REGIONS = {
    LABEL_LIPS: (0.50, 0.63, 0.106, 0.062),
    LABEL_EYE_L: (0.41, 0.40, 0.069, 0.052),
    LABEL_EYE_R: (0.59, 0.40, 0.069, 0.052),
    LABEL_CHEEK_L: (0.345, 0.54, 0.062, 0.055),
    LABEL_CHEEK_R: (0.655, 0.54, 0.062, 0.055),
}


def _label_for_uv(u: float, v: float) -> int:
    for label, (cu, cv, ru, rv) in _REGIONS.items():
        if ((u - cu) / ru) ** 2 + ((v - cv) / rv) ** 2 <= 1.0:
            return label
    return LABEL_SKIN


def feathered_overlays(
    colors: dict | None = None,
    feather: float = 0.8,
    resolution: int = 256,
    beta: float = 1.0,
):
    """Procedural makeup recipe for the synthetic head's regions.

    The blend strength ramps from full in the region core to zero at the
    region boundary over the outer ``feather`` fraction of the ellipse
    radius, which keeps the supervision free of pixel-sharp edges no
    splat surface could reproduce.
    """
    from .guidance import ProceduralMakeupSpec, RegionOverlay

    if colors is None:
        colors = {
            LABEL_LIPS: (0.85, 0.08, 0.10),
            LABEL_EYE_L: (0.25, 0.30, 0.85),
            LABEL_EYE_R: (0.25, 0.30, 0.85),
        }
    grid = (np.arange(resolution) + 0.5) / resolution
    uu, vv = np.meshgrid(grid, grid, indexing="ij")
    overlays = {}
    for label, color in colors.items():
        cu, cv, ru, rv = _REGIONS[label]
        r_hat = np.sqrt(((uu - cu) / ru) ** 2 + ((vv - cv) / rv) ** 2)
        ramp = np.clip((1.0 - r_hat) / max(feather, 1e-6), 0.0, 1.0) if feather > 0 else (
            (r_hat <= 1.0).astype(np.float64)
        )
        overlays[label] = RegionOverlay(color=color, beta=beta, beta_pattern=ramp)
    return ProceduralMakeupSpec(overlays=overlays)


def make_head_mesh(
    n_lat: int = 32,
    n_lon: int = 32,
    radii=(0.55, 0.75, 0.60),
) -> TriangleMesh:
    """UV-sphere ellipsoid facing +z, with per-triangle region labels."""
    rx, ry, rz = radii
    iv, jv = np.meshgrid(np.arange(n_lat + 1), np.arange(n_lon + 1), indexing="ij")
    v_par = iv / n_lat
    u_par = jv / n_lon
    theta = np.pi * v_par
    phi = 2.0 * np.pi * (u_par - 0.5)
    verts = np.stack(
        [
            rx * np.sin(theta) * np.sin(phi),
            ry * np.cos(theta),
            rz * np.sin(theta) * np.cos(phi),
        ],
        axis=-1,
    ).reshape(-1, 3)
    uv_grid = np.stack([u_par, v_par], axis=-1).reshape(-1, 2)

    def vid(i, j):
        return i * (n_lon + 1) + j

    tris, corner_uvs, labels = [], [], []
    for i in range(n_lat):
        for j in range(n_lon):
            p00 = vid(i, j)
            p10 = vid(i + 1, j)
            p11 = vid(i + 1, j + 1)
            p01 = vid(i, j + 1)
            faces = []
            if i < n_lat - 1:  # degenerate at the bottom pole (p10 == p11)
                faces.append((p00, p10, p11))
            if i > 0:  # degenerate at the top pole (p00 == p01)
                faces.append((p00, p11, p01))
            for f in faces:
                tris.append(f)
                corner_uvs.append([uv_grid[f[0]], uv_grid[f[1]], uv_grid[f[2]]])
                cu, cv = np.mean([uv_grid[k] for k in f], axis=0)
                labels.append(_label_for_uv(float(cu), float(cv)))

    return TriangleMesh(
        vertices=verts,
        triangles=np.array(tris, dtype=np.uint32),
        uv_corners=np.array(corner_uvs),
        region_labels=np.array(labels, dtype=np.uint32),
    )


def make_poses(mesh: TriangleMesh, n_poses: int = 4, seed: int = 0) -> list[MeshPose]:
    """Canonical pose plus procedural jaw tilts and surface bulges."""
    rng = np.random.default_rng(seed)
    verts = mesh.vertices
    poses = [MeshPose("canonical", verts.copy())]
    y_min = verts[:, 1].min()
    y_pivot = 0.05
    for p in range(1, n_poses):
        if p % 2 == 1:
            # jaw tilt: rotate the lower head about the lateral axis with a
            # smooth weight, stronger toward the chin
            angle = float(rng.uniform(0.06, 0.16))
            w = np.clip((y_pivot - verts[:, 1]) / (y_pivot - y_min), 0.0, 1.0) ** 2
            a = angle * w
            c, s = np.cos(a), np.sin(a)
            rel = verts - np.array([0.0, y_pivot, 0.0])
            out = rel.copy()
            out[:, 1] = c * rel[:, 1] - s * rel[:, 2]
            out[:, 2] = s * rel[:, 1] + c * rel[:, 2]
            out += np.array([0.0, y_pivot, 0.0])
            poses.append(MeshPose(f"jaw_{p:02d}", out))
        else:
            # radial bulge around a random front-facing direction
            amp = float(rng.uniform(0.05, 0.12))
            center = rng.normal(size=3)
            center[2] = abs(center[2]) + 0.5
            center /= np.linalg.norm(center)
            dirs = verts / np.linalg.norm(verts, axis=1, keepdims=True)
            falloff = np.exp(-((1.0 - dirs @ center) / 0.08))
            out = verts * (1.0 + amp * falloff)[:, None]
            poses.append(MeshPose(f"bulge_{p:02d}", out))
        # poses must keep every triangle usable
        triangle_frames(poses[-1].vertex_positions, mesh.triangles)
    return poses


def _triangle_lattice(d: int, shrink: float = 0.40) -> np.ndarray:
    """d stratified barycentric points pulled toward the centroid.

    A golden-ratio lattice folded into the triangle gives even coverage
    for any d; the shrink keeps every point nearer its own triangle's
    centroid than any neighbor's, which nearest-centroid binding needs.
    """
    pts = [np.array([1.0, 1.0, 1.0]) / 3.0]
    g1, g2 = 0.7548776662466927, 0.5698402909980532  # plastic-number lattice
    i = 1
    while len(pts) < d:
        a, b = (i * g1) % 1.0, (i * g2) % 1.0
        if a + b > 1.0:
            a, b = 1.0 - a, 1.0 - b
        w = np.array([1.0 - a - b, a, b])
        pts.append(1.0 / 3.0 + shrink * (w - 1.0 / 3.0))
        i += 1
    return np.stack(pts[:d])


def init_kernels(
    mesh: TriangleMesh,
    kernels_per_triangle: int = 5,
    seed: int = 0,
    skin_tone=(0.80, 0.60, 0.50),
    color_jitter: float = 0.02,
    opacity_logit: float = 3.0,
    in_plane_scale: float = 0.50,
    normal_scale: float = 0.15,
    position_jitter: float = 0.02,
) -> GaussianKernels:
    """World-space kernels on triangle surfaces: one at each centroid plus
    a stratified lattice of extras, oriented with the triangle, colored
    like skin.

    The lattice jitter stays close to the centroid so every kernel's
    nearest triangle centroid is its own triangle.
    """
    rng = np.random.default_rng(seed)
    t_count = mesh.num_triangles
    d = kernels_per_triangle
    trans, rot, k = triangle_frames(mesh.vertices, mesh.triangles)
    corners = mesh.vertices[mesh.triangles.astype(np.int64)]  # (T, 3, 3)

    weights = np.tile(_triangle_lattice(d), (t_count, 1, 1))
    weights += position_jitter * rng.uniform(-1.0, 1.0, size=weights.shape)
    weights[:, 0, :] = 1.0 / 3.0  # first kernel sits exactly at the centroid
    weights /= weights.sum(axis=2, keepdims=True)
    positions = np.einsum("tdc,tcx->tdx", weights, corners).reshape(-1, 3)

    frame_q = matrix_to_quat(rot)
    quats = np.repeat(frame_q, d, axis=0)
    in_plane = in_plane_scale * k / np.sqrt(d)
    scales = np.stack([in_plane, in_plane, normal_scale * k], axis=1)
    scales = np.repeat(scales, d, axis=0)

    colors = np.asarray(skin_tone) + rng.normal(0.0, color_jitter, size=(t_count * d, 3))
    colors = np.clip(colors, 0.0, 1.0)
    logits = np.full(t_count * d, float(opacity_logit))
    return GaussianKernels(
        mu_local=positions,
        q_local=quats,
        s_local=scales,
        color=colors,
        opacity_logit=logits,
    )


def synth_head(
    n_lat: int = 32,
    n_lon: int = 32,
    kernels_per_triangle: int = 5,
    n_poses: int = 4,
    seed: int = 0,
    radii=(0.55, 0.75, 0.60),
    skin_tone=(0.80, 0.60, 0.50),
    color_jitter: float = 0.02,
) -> tuple[AvatarModel, list[MeshPose]]:
    """A bound synthetic avatar plus its pose set."""
    mesh = make_head_mesh(n_lat, n_lon, radii)
    kernels = init_kernels(
        mesh,
        kernels_per_triangle,
        seed=seed,
        skin_tone=skin_tone,
        color_jitter=color_jitter,
    )
    model = AvatarModel(mesh=mesh, kernels=kernels)
    bind_kernels(model)
    poses = make_poses(mesh, n_poses=n_poses, seed=seed + 1)
    return model, poses


def synth_cameras(
    n_ring: int = 16,
    resolution: int = 512,
    radius: float = 2.4,
    fov_y_deg: float = 40.0,
) -> tuple[list[Camera], list[Camera]]:
    """(bake ring, evaluation trio at azimuths +45/0/-45 degrees)."""
    ring = camera_ring(
        n_ring,
        radius,
        resolution,
        resolution,
        azimuth_range_deg=(-90.0, 90.0),
        fov_y_deg=fov_y_deg,
        prefix="ring",
    )
    evals = []
    for name, az in (("eval_p45", 45.0), ("eval_0", 0.0), ("eval_m45", -45.0)):
        eye = radius * np.array([np.sin(np.deg2rad(az)), 0.0, np.cos(np.deg2rad(az))])
        cam = look_at(name, eye, (0, 0, 0), resolution, resolution, fov_y_deg=fov_y_deg)
        evals.append(cam)
    return ring, evals
