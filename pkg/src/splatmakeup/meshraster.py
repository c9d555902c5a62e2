"""Z-buffered triangle rasterization producing UV/region g-buffers.

Perspective-correct barycentrics: screen-space weights are divided by
the camera-space depth of each corner and renormalized, which makes UV
interpolation correct under projection.  Back-facing triangles (outward
normal pointing away from the camera) are discarded, as are triangles
with any corner closer than the near plane; there is no polygon
clipping at desk scale.
"""

from dataclasses import dataclass

import numpy as np

from .avatar import MeshPose, TriangleMesh
from .camera import Camera

NEAR_PLANE = 0.01


@dataclass
class GBuffer:
    uv: np.ndarray            # (H, W, 2); valid only where covered
    triangle_id: np.ndarray   # (H, W) int32, -1 where empty
    region_label: np.ndarray  # (H, W) int32, 0 where empty
    depth: np.ndarray         # (H, W) float64, +inf where empty

    @property
    def coverage(self) -> np.ndarray:
        return self.triangle_id >= 0


def rasterize_mesh(mesh: TriangleMesh, pose: MeshPose, camera: Camera) -> GBuffer:
    h, w = camera.height, camera.width
    gb = GBuffer(
        uv=np.zeros((h, w, 2)),
        triangle_id=np.full((h, w), -1, dtype=np.int32),
        region_label=np.zeros((h, w), dtype=np.int32),
        depth=np.full((h, w), np.inf),
    )
    if mesh.num_triangles == 0:
        return gb

    verts_cam = camera.to_camera(pose.vertex_positions)
    z = verts_cam[:, 2]
    sx = camera.fx * verts_cam[:, 0] / z + camera.cx
    sy = camera.fy * verts_cam[:, 1] / z + camera.cy

    tris = mesh.triangles.astype(np.int64)
    for t in range(len(tris)):
        i0, i1, i2 = tris[t]
        z0, z1, z2 = z[i0], z[i1], z[i2]
        if z0 <= NEAR_PLANE or z1 <= NEAR_PLANE or z2 <= NEAR_PLANE:
            continue
        # back-face: outward normal (counter-clockwise winding seen from
        # outside) pointing away from the camera
        e1 = verts_cam[i1] - verts_cam[i0]
        e2 = verts_cam[i2] - verts_cam[i0]
        normal = np.cross(e1, e2)
        centroid = (verts_cam[i0] + verts_cam[i1] + verts_cam[i2]) / 3.0
        if normal @ centroid >= 0.0:
            continue

        ax, ay = sx[i0], sy[i0]
        bx, by = sx[i1], sy[i1]
        cx, cy = sx[i2], sy[i2]
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(area2) < 1e-12:
            continue

        x_lo = max(int(np.ceil(min(ax, bx, cx) - 0.5)), 0)
        x_hi = min(int(np.floor(max(ax, bx, cx) - 0.5)), w - 1)
        y_lo = max(int(np.ceil(min(ay, by, cy) - 0.5)), 0)
        y_hi = min(int(np.floor(max(ay, by, cy) - 0.5)), h - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue

        px = np.arange(x_lo, x_hi + 1) + 0.5
        py = np.arange(y_lo, y_hi + 1) + 0.5
        gx, gy = np.meshgrid(px, py)

        l0 = ((bx - gx) * (cy - gy) - (by - gy) * (cx - gx)) / area2
        l1 = ((cx - gx) * (ay - gy) - (cy - gy) * (ax - gx)) / area2
        l2 = 1.0 - l0 - l1
        inside = (l0 >= 0.0) & (l1 >= 0.0) & (l2 >= 0.0)
        if not inside.any():
            continue

        w0 = l0 / z0
        w1 = l1 / z1
        w2 = l2 / z2
        denom = w0 + w1 + w2
        depth = 1.0 / denom

        tile = gb.depth[y_lo : y_hi + 1, x_lo : x_hi + 1]
        win = inside & (depth < tile)
        if not win.any():
            continue

        uv0, uv1, uv2 = mesh.uv_corners[t]
        u = (w0 * uv0[0] + w1 * uv1[0] + w2 * uv2[0]) * depth
        v = (w0 * uv0[1] + w1 * uv1[1] + w2 * uv2[1]) * depth

        tile[win] = depth[win]
        gb.triangle_id[y_lo : y_hi + 1, x_lo : x_hi + 1][win] = t
        gb.region_label[y_lo : y_hi + 1, x_lo : x_hi + 1][win] = int(
            mesh.region_labels[t]
        )
        uv_tile = gb.uv[y_lo : y_hi + 1, x_lo : x_hi + 1]
        uv_tile[win, 0] = u[win]
        uv_tile[win, 1] = v[win]
    return gb
