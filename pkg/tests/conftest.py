import numpy as np
import pytest

import splatmakeup as sm


@pytest.fixture(scope="session")
def small_head():
    """A small bound head with poses, shared by read-only tests."""
    model, poses = sm.synth_head(n_lat=12, n_lon=12, kernels_per_triangle=3, seed=0)
    return model, poses


@pytest.fixture(scope="session")
def small_cameras():
    ring, evals = sm.synth_cameras(n_ring=6, resolution=96)
    return ring, evals


def random_mesh(rng, n_triangles=8, spread=1.0):
    """Random well-separated triangles with valid UVs."""
    verts = []
    tris = []
    for t in range(n_triangles):
        center = rng.uniform(-spread, spread, 3)
        corners = center + rng.uniform(-0.3, 0.3, (3, 3))
        while np.linalg.norm(np.cross(corners[1] - corners[0], corners[2] - corners[0])) < 1e-3:
            corners = center + rng.uniform(-0.3, 0.3, (3, 3))
        base = len(verts)
        verts.extend(corners)
        tris.append((base, base + 1, base + 2))
    uvs = rng.uniform(0, 1, (n_triangles, 3, 2))
    labels = np.zeros(n_triangles, dtype=np.uint32)
    return sm.TriangleMesh(np.array(verts), np.array(tris, dtype=np.uint32), uvs, labels)
