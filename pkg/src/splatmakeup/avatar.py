"""Mesh-rigged Gaussian kernels: triangle frames, binding, and posing.

A kernel lives in the local frame of one mesh triangle.  The frame of a
triangle (v1, v2, v3) is:

    T = (v1 + v2 + v3) / 3
    R = [e1_hat | n x e1_hat | n]   (columns; e1 = v2 - v1, n = unit normal)
    k = (|e1| + h) / 2              (h = distance of v3 from the line v1-v2)

Posing maps local kernel parameters through the frame of the bound
triangle under the requested pose:

    rot'   = R * rot
    mu'    = k * R * mu + T
    scale' = k * scale

Binding inverts the same three equations against the canonical pose, so
bind-then-pose at the canonical pose is the identity.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTriangle, EmptyMesh
from .rotations import matrix_to_quat, quat_conjugate, quat_multiply, quat_normalize

# Triangles with less area than this (squared length units) have no
# usable frame and raise instead of producing NaNs.
AREA_EPS = 1e-12


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class TriangleMesh:
    """Canonical-pose triangle mesh with per-corner UVs and region labels.

    vertices      (V, 3) float64
    triangles     (T, 3) uint32 vertex indices
    uv_corners    (T, 3, 2) float64 in [0, 1]
    region_labels (T,) uint32; 0 marks "no makeup region"
    """

    vertices: np.ndarray
    triangles: np.ndarray
    uv_corners: np.ndarray
    region_labels: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.uint32)
        self.uv_corners = np.asarray(self.uv_corners, dtype=np.float64)
        self.region_labels = np.asarray(self.region_labels, dtype=np.uint32)
        self.validate()

    def validate(self):
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")
        if self.uv_corners.shape != (len(self.triangles), 3, 2):
            raise ValueError("uv_corners must be (T, 3, 2)")
        if self.region_labels.shape != (len(self.triangles),):
            raise ValueError("region_labels must be (T,)")
        if self.uv_corners.size and (
            self.uv_corners.min() < 0.0 or self.uv_corners.max() > 1.0
        ):
            raise ValueError("uv coordinates must lie in [0, 1]")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)


@dataclass
class MeshPose:
    """A full vertex-position array for one pose of a mesh."""

    pose_id: str
    vertex_positions: np.ndarray  # (V, 3) float64

    def __post_init__(self):
        self.vertex_positions = np.asarray(self.vertex_positions, dtype=np.float64)


@dataclass
class TriangleFrame:
    T: np.ndarray  # (3,)
    R: np.ndarray  # (3, 3), orthonormal, det +1
    k: float       # > 0


@dataclass
class GaussianKernels:
    """Per-kernel parameters, stored as arrays over the kernel axis.

    Before binding, mu/quat/scale are world-space initialization values;
    ``bind_kernels`` rewrites them into the bound triangle's local frame.
    Only ``color`` and ``opacity_logit`` are ever touched by training.
    """

    mu_local: np.ndarray       # (K, 3)
    q_local: np.ndarray        # (K, 4) unit, wxyz
    s_local: np.ndarray        # (K, 3) positive
    color: np.ndarray          # (K, 3) in [0, 1]
    opacity_logit: np.ndarray  # (K,)

    def __post_init__(self):
        self.mu_local = np.asarray(self.mu_local, dtype=np.float64)
        self.q_local = np.asarray(self.q_local, dtype=np.float64)
        self.s_local = np.asarray(self.s_local, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        self.opacity_logit = np.asarray(self.opacity_logit, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.mu_local)

    def opacity(self) -> np.ndarray:
        """Opacity alpha = logistic(opacity_logit), in (0, 1)."""
        return _sigmoid(self.opacity_logit)

    def copy(self) -> "GaussianKernels":
        return GaussianKernels(
            self.mu_local.copy(),
            self.q_local.copy(),
            self.s_local.copy(),
            self.color.copy(),
            self.opacity_logit.copy(),
        )


@dataclass
class AvatarModel:
    mesh: TriangleMesh
    kernels: GaussianKernels
    binding: np.ndarray | None = None  # (K,) uint32 triangle index per kernel

    def __post_init__(self):
        if self.binding is not None:
            self.binding = np.asarray(self.binding, dtype=np.uint32)
            if len(self.binding) != len(self.kernels):
                raise ValueError("binding length must equal kernel count")
            if self.binding.size and self.binding.max() >= self.mesh.num_triangles:
                raise ValueError("binding index out of range")

    def canonical_pose(self) -> MeshPose:
        return MeshPose("canonical", self.mesh.vertices.copy())

    def copy(self) -> "AvatarModel":
        binding = None if self.binding is None else self.binding.copy()
        return AvatarModel(self.mesh, self.kernels.copy(), binding)


@dataclass
class WorldGaussians:
    """Kernels pushed through their triangle frames into world space."""

    position: np.ndarray  # (K, 3)
    quat: np.ndarray      # (K, 4) unit, wxyz
    scale: np.ndarray     # (K, 3)
    color: np.ndarray     # (K, 3)
    opacity: np.ndarray   # (K,) alpha in (0, 1)


def triangle_frames(
    vertex_positions: np.ndarray, triangles: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Frames for every triangle: translations (T,3), rotations (T,3,3), scales (T,).

    Raises DegenerateTriangle if any triangle area is <= AREA_EPS.
    """
    v1 = vertex_positions[triangles[:, 0]]
    v2 = vertex_positions[triangles[:, 1]]
    v3 = vertex_positions[triangles[:, 2]]
    e1 = v2 - v1
    d3 = v3 - v1
    n_raw = np.cross(e1, d3)
    n_norm = np.linalg.norm(n_raw, axis=1)
    area = 0.5 * n_norm
    if np.any(area <= AREA_EPS):
        bad = int(np.argmin(area))
        raise DegenerateTriangle(f"triangle {bad} has area {area[bad]:.3e}")
    e1_len = np.linalg.norm(e1, axis=1)
    e1_hat = e1 / e1_len[:, None]
    n_hat = n_raw / n_norm[:, None]
    b_hat = np.cross(n_hat, e1_hat)
    rot = np.stack([e1_hat, b_hat, n_hat], axis=2)  # columns
    h = n_norm / e1_len  # |e1 x d3| / |e1| = perpendicular distance of v3
    k = (e1_len + h) / 2.0
    t = (v1 + v2 + v3) / 3.0
    return t, rot, k


def compute_triangle_frame(v1, v2, v3) -> TriangleFrame:
    """Frame of a single triangle given its three vertex positions."""
    verts = np.asarray([v1, v2, v3], dtype=np.float64)
    tris = np.array([[0, 1, 2]], dtype=np.uint32)
    t, rot, k = triangle_frames(verts, tris)
    return TriangleFrame(T=t[0], R=rot[0], k=float(k[0]))


def triangle_centroids(vertex_positions: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    return (
        vertex_positions[triangles[:, 0]]
        + vertex_positions[triangles[:, 1]]
        + vertex_positions[triangles[:, 2]]
    ) / 3.0


def nearest_triangle(points: np.ndarray, centroids: np.ndarray, block: int = 1024) -> np.ndarray:
    """Index of the centroid nearest each point; ties go to the lowest index."""
    out = np.empty(len(points), dtype=np.uint32)
    for start in range(0, len(points), block):
        chunk = points[start : start + block]
        d2 = ((chunk[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        out[start : start + block] = np.argmin(d2, axis=1)  # argmin = first minimum
    return out


def bind_kernels(model: AvatarModel) -> np.ndarray:
    """Bind each kernel to the triangle with the nearest canonical centroid.

    The kernels are expected to carry provisional world-space parameters;
    these are rewritten in place into the bound triangle's local frame by
    inverting the posing equations.  Returns the binding indices (also
    stored on the model).
    """
    mesh = model.mesh
    if mesh.num_triangles == 0:
        raise EmptyMesh("cannot bind kernels to a mesh with no triangles")
    centroids = triangle_centroids(mesh.vertices, mesh.triangles)
    binding = nearest_triangle(model.kernels.mu_local, centroids)

    t, rot, k = triangle_frames(mesh.vertices, mesh.triangles)
    tb, rb, kb = t[binding], rot[binding], k[binding]

    kern = model.kernels
    mu_local = np.einsum("kij,kj->ki", rb.transpose(0, 2, 1), kern.mu_local - tb)
    mu_local /= kb[:, None]
    frame_q = matrix_to_quat(rb)
    q_local = quat_normalize(quat_multiply(quat_conjugate(frame_q), kern.q_local))
    s_local = kern.s_local / kb[:, None]

    kern.mu_local = mu_local
    kern.q_local = q_local
    kern.s_local = s_local
    model.binding = binding
    return binding


def pose_kernels(model: AvatarModel, pose: MeshPose) -> WorldGaussians:
    """World-space Gaussians for the model under one pose.

    Color and opacity pass through untouched by the frame transform.
    """
    if model.binding is None:
        raise ValueError("model has no binding; call bind_kernels first")
    verts = pose.vertex_positions
    if verts.shape != model.mesh.vertices.shape:
        raise ValueError("pose vertex array does not match the mesh")
    t, rot, k = triangle_frames(verts, model.mesh.triangles)
    idx = model.binding
    tb, rb, kb = t[idx], rot[idx], k[idx]

    kern = model.kernels
    position = kb[:, None] * np.einsum("kij,kj->ki", rb, kern.mu_local) + tb
    frame_q = matrix_to_quat(rb)
    quat = quat_normalize(quat_multiply(frame_q, kern.q_local))
    scale = kb[:, None] * kern.s_local
    return WorldGaussians(
        position=position,
        quat=quat,
        scale=scale,
        color=kern.color.copy(),
        opacity=kern.opacity(),
    )
