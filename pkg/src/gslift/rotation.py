"""Quaternion helpers.

Quaternions are stored as (w, x, y, z). All functions broadcast over
leading axes, so a single quaternion is shape (4,) and a batch is (N, 4).
"""

import numpy as np


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / norm


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] *= -1.0
    return out


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b: the rotation that applies b first, then a."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) to rotation matrix/matrices, shape (..., 3, 3)."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix/matrices to unit quaternion(s) with w >= 0.

    Branches on the largest diagonal combination (Shepperd's method) so the
    conversion stays accurate for all rotation angles.
    """
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    m = m.reshape((-1, 3, 3))
    n = m.shape[0]
    q = np.empty((n, 4), dtype=np.float64)

    tr = np.trace(m, axis1=-2, axis2=-1)
    d0, d1, d2 = m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]
    choice = np.argmax(np.stack([tr, d0, d1, d2], axis=-1), axis=-1)

    c = choice == 0
    if np.any(c):
        s = np.sqrt(tr[c] + 1.0) * 2.0
        q[c, 0] = 0.25 * s
        q[c, 1] = (m[c, 2, 1] - m[c, 1, 2]) / s
        q[c, 2] = (m[c, 0, 2] - m[c, 2, 0]) / s
        q[c, 3] = (m[c, 1, 0] - m[c, 0, 1]) / s
    c = choice == 1
    if np.any(c):
        s = np.sqrt(1.0 + d0[c] - d1[c] - d2[c]) * 2.0
        q[c, 0] = (m[c, 2, 1] - m[c, 1, 2]) / s
        q[c, 1] = 0.25 * s
        q[c, 2] = (m[c, 0, 1] + m[c, 1, 0]) / s
        q[c, 3] = (m[c, 0, 2] + m[c, 2, 0]) / s
    c = choice == 2
    if np.any(c):
        s = np.sqrt(1.0 - d0[c] + d1[c] - d2[c]) * 2.0
        q[c, 0] = (m[c, 0, 2] - m[c, 2, 0]) / s
        q[c, 1] = (m[c, 0, 1] + m[c, 1, 0]) / s
        q[c, 2] = 0.25 * s
        q[c, 3] = (m[c, 1, 2] + m[c, 2, 1]) / s
    c = choice == 3
    if np.any(c):
        s = np.sqrt(1.0 - d0[c] - d1[c] + d2[c]) * 2.0
        q[c, 0] = (m[c, 1, 0] - m[c, 0, 1]) / s
        q[c, 1] = (m[c, 0, 2] + m[c, 2, 0]) / s
        q[c, 2] = (m[c, 1, 2] + m[c, 2, 1]) / s
        q[c, 3] = 0.25 * s

    q[q[:, 0] < 0] *= -1.0
    return quat_normalize(q).reshape(batch + (4,))


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qv = q[..., 1:]
    w = q[..., 0:1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_slerp(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between unit quaternions."""
    a = quat_normalize(a)
    b = quat_normalize(b)
    dot = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(dot < 0, -b, b)
    dot = np.abs(dot)

    # nearly parallel: fall back to normalized lerp
    close = dot > 1.0 - 1e-12
    dot = np.clip(dot, -1.0, 1.0)
    theta = np.arccos(dot)
    sin_theta = np.sin(theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        wa = np.sin((1.0 - alpha) * theta) / sin_theta
        wb = np.sin(alpha * theta) / sin_theta
    wa = np.where(close, 1.0 - alpha, wa)
    wb = np.where(close, alpha, wb)
    return quat_normalize(wa * a + wb * b)


def quat_angle(q: np.ndarray) -> np.ndarray:
    """Rotation angle in radians, in [0, pi]."""
    q = quat_normalize(q)
    w = np.clip(np.abs(q[..., 0]), -1.0, 1.0)
    return 2.0 * np.arccos(w)


def random_quat(rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniformly distributed unit quaternion(s) (w >= 0)."""
    shape = (4,) if size is None else (size, 4)
    q = rng.normal(size=shape)
    q = quat_normalize(q)
    return np.where(q[..., 0:1] < 0, -q, q)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])
