"""Quaternion helpers (wxyz convention, batched over the leading axis)."""

import numpy as np


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product q1 * q2."""
    w1, x1, y1, z1 = np.moveaxis(q1, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(q2, -1, 0)
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) -> rotation matrix/matrices, shape (..., 3, 3)."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    m[..., 0, 1] = 2.0 * (xy - wz)
    m[..., 0, 2] = 2.0 * (xz + wy)
    m[..., 1, 0] = 2.0 * (xy + wz)
    m[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    m[..., 1, 2] = 2.0 * (yz - wx)
    m[..., 2, 0] = 2.0 * (xz - wy)
    m[..., 2, 1] = 2.0 * (yz + wx)
    m[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return m


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix/matrices -> unit quaternion(s), w >= 0.

    Shepperd's branch selection keeps the conversion stable for all
    orientations, not just small rotations.
    """
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    n = m.shape[0]
    q = np.empty((n, 4), dtype=np.float64)

    trace = m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]

    c1 = trace > 0
    s = np.sqrt(np.where(c1, trace + 1.0, 1.0)) * 2.0
    q[c1, 0] = 0.25 * s[c1]
    q[c1, 1] = (m[c1, 2, 1] - m[c1, 1, 2]) / s[c1]
    q[c1, 2] = (m[c1, 0, 2] - m[c1, 2, 0]) / s[c1]
    q[c1, 3] = (m[c1, 1, 0] - m[c1, 0, 1]) / s[c1]

    c2 = ~c1 & (m[:, 0, 0] > m[:, 1, 1]) & (m[:, 0, 0] > m[:, 2, 2])
    s = np.sqrt(np.abs(1.0 + m[:, 0, 0] - m[:, 1, 1] - m[:, 2, 2])) * 2.0
    q[c2, 0] = (m[c2, 2, 1] - m[c2, 1, 2]) / s[c2]
    q[c2, 1] = 0.25 * s[c2]
    q[c2, 2] = (m[c2, 0, 1] + m[c2, 1, 0]) / s[c2]
    q[c2, 3] = (m[c2, 0, 2] + m[c2, 2, 0]) / s[c2]

    c3 = ~c1 & ~c2 & (m[:, 1, 1] > m[:, 2, 2])
    s = np.sqrt(np.abs(1.0 + m[:, 1, 1] - m[:, 0, 0] - m[:, 2, 2])) * 2.0
    q[c3, 0] = (m[c3, 0, 2] - m[c3, 2, 0]) / s[c3]
    q[c3, 1] = (m[c3, 0, 1] + m[c3, 1, 0]) / s[c3]
    q[c3, 2] = 0.25 * s[c3]
    q[c3, 3] = (m[c3, 1, 2] + m[c3, 2, 1]) / s[c3]

    c4 = ~c1 & ~c2 & ~c3
    s = np.sqrt(np.abs(1.0 + m[:, 2, 2] - m[:, 0, 0] - m[:, 1, 1])) * 2.0
    q[c4, 0] = (m[c4, 1, 0] - m[c4, 0, 1]) / s[c4]
    q[c4, 1] = (m[c4, 0, 2] + m[c4, 2, 0]) / s[c4]
    q[c4, 2] = (m[c4, 1, 2] + m[c4, 2, 1]) / s[c4]
    q[c4, 3] = 0.25 * s[c4]

    q = quat_normalize(q)
    flip = q[:, 0] < 0
    q[flip] = -q[flip]
    return q.reshape(batch + (4,))


def random_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    return quat_normalize(q)
