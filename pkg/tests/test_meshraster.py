"""G-buffer rasterization: barycentrics, z-buffering, culling."""

import numpy as np
import pytest

import splatmakeup as sm


def front_camera(width=32, height=32, f=40.0):
    return sm.Camera("front", width, height, f, f, width / 2.0, height / 2.0, np.eye(4))


def single_triangle_mesh(verts, uvs=None, label=1):
    uvs = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]]) if uvs is None else uvs
    return sm.TriangleMesh(
        np.asarray(verts, dtype=np.float64),
        np.array([[0, 1, 2]], dtype=np.uint32),
        uvs,
        np.array([label], dtype=np.uint32),
    )


def barycentric_raycast(v0, v1, v2, camera, px, py):
    """Independent oracle: intersect the pixel ray with the triangle
    plane and solve the 3D barycentric coordinates directly."""
    direction = np.array(
        [(px + 0.5 - camera.cx) / camera.fx, (py + 0.5 - camera.cy) / camera.fy, 1.0]
    )
    n = np.cross(v1 - v0, v2 - v0)
    t = (n @ v0) / (n @ direction)
    p = t * direction
    # solve p - v0 = b1 (v1 - v0) + b2 (v2 - v0)
    a = np.stack([v1 - v0, v2 - v0], axis=1)
    b1, b2 = np.linalg.lstsq(a, p - v0, rcond=None)[0]
    return np.array([1.0 - b1 - b2, b1, b2]), t


class TestRasterize:
    def test_fullscreen_triangle_uv_matches_raycast_oracle(self):
        cam = front_camera()
        # big slanted triangle covering the whole view, wound to face the camera
        v = np.array([[-9.0, -9.0, 4.0], [-8.0, 14.0, 5.0], [14.0, -8.0, 6.5]])
        mesh = single_triangle_mesh(v)
        gb = sm.rasterize_mesh(mesh, sm.MeshPose("p", v), cam)
        assert gb.coverage.all()
        for py in range(0, cam.height, 3):
            for px in range(0, cam.width, 3):
                bary, depth = barycentric_raycast(v[0], v[1], v[2], cam, px, py)
                # corner uvs are (0,0), (1,0), (0,1): uv = (b1, b2)
                np.testing.assert_allclose(
                    gb.uv[py, px], [bary[1], bary[2]], atol=1e-4
                )
                assert gb.depth[py, px] == pytest.approx(depth, abs=1e-6)

    def test_two_stacked_triangles_nearer_wins(self):
        cam = front_camera()
        near = np.array([[-4.0, -4.0, 3.0], [-3.5, 6.0, 3.0], [6.0, -3.0, 3.0]])
        far = near + [0.0, 0.0, 2.0]
        verts = np.vstack([far, near])
        mesh = sm.TriangleMesh(
            verts,
            np.array([[0, 1, 2], [3, 4, 5]], dtype=np.uint32),
            np.tile(np.array([[[0.0, 0], [1, 0], [0, 1]]]), (2, 1, 1)),
            np.array([1, 2], dtype=np.uint32),
        )
        gb = sm.rasterize_mesh(mesh, sm.MeshPose("p", verts), cam)
        covered = gb.coverage
        assert covered.any()
        assert (gb.triangle_id[covered] == 1).all()
        assert (gb.region_label[covered] == 2).all()

    def test_empty_mesh_all_empty(self):
        cam = front_camera()
        mesh = sm.TriangleMesh(
            np.zeros((3, 3)),
            np.zeros((0, 3), dtype=np.uint32),
            np.zeros((0, 3, 2)),
            np.zeros(0, dtype=np.uint32),
        )
        gb = sm.rasterize_mesh(mesh, sm.MeshPose("p", np.zeros((3, 3))), cam)
        assert not gb.coverage.any()
        assert (gb.triangle_id == -1).all()
        assert np.isinf(gb.depth).all()

    def test_backface_discarded(self):
        cam = front_camera()
        v = np.array([[-2.0, -2.0, 4.0], [2.0, -2.0, 4.0], [0.0, 2.0, 4.0]])
        front = single_triangle_mesh(v)  # counter-clockwise seen from camera
        flipped = sm.TriangleMesh(
            v,
            np.array([[0, 2, 1]], dtype=np.uint32),
            front.uv_corners.copy(),
            front.region_labels.copy(),
        )
        gb_f = sm.rasterize_mesh(front, sm.MeshPose("p", v), cam)
        gb_b = sm.rasterize_mesh(flipped, sm.MeshPose("p", v), cam)
        assert gb_f.coverage.any() != gb_b.coverage.any()

    def test_behind_near_plane_skipped(self):
        cam = front_camera()
        v = np.array([[-2.0, -2.0, -1.0], [2.0, -2.0, -1.0], [0.0, 2.0, -1.0]])
        gb = sm.rasterize_mesh(single_triangle_mesh(v), sm.MeshPose("p", v), cam)
        assert not gb.coverage.any()

    def test_uv_present_iff_triangle_present(self, small_head, small_cameras):
        model, poses = small_head
        ring, evals = small_cameras
        gb = sm.rasterize_mesh(model.mesh, poses[0], evals[1])
        cov = gb.coverage
        assert cov.any() and not cov.all()
        assert (gb.uv[~cov] == 0).all()
        assert np.isinf(gb.depth[~cov]).all()
        uv = gb.uv[cov]
        assert uv.min() >= 0.0 and uv.max() <= 1.0

    def test_head_depth_is_front_surface(self, small_head, small_cameras):
        # every covered depth must be on the near half of the ellipsoid
        model, poses = small_head
        _, evals = small_cameras
        cam = evals[1]
        gb = sm.rasterize_mesh(model.mesh, poses[0], cam)
        eye_dist = np.linalg.norm(-cam.rotation.T @ cam.translation)
        depths = gb.depth[gb.coverage]
        assert depths.max() <= eye_dist + 1e-6  # never beyond the center
