"""Rotation representations: 3x3 matrices, unit quaternions and the 6D
(first-two-columns) encoding, plus geodesic error in degrees.

All functions broadcast over leading batch dimensions.
"""
import numpy as np

from .errors import DegenerateInput

_EPS = 1e-12


def r6_to_mat(r6, *, on_degenerate="raise"):
    """Project 6D vectors ``(a1, a2)`` onto SO(3) by Gram-Schmidt.

    Parameters
    ----------
    r6 : array_like, shape (..., 6)
        First column ``a1`` followed by second column ``a2``; need not be
        normalized.
    on_degenerate : {"raise", "identity"}
        What to do when ``a1`` vanishes or ``a2`` is parallel to it. With
        "identity" the offending entries decode to the identity matrix.

    Returns
    -------
    ndarray, shape (..., 3, 3)
        Columns ``(b1, b2, b1 x b2)``.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    a1, a2 = r6[..., :3], r6[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    bad = n1[..., 0] <= _EPS
    b1 = a1 / np.where(n1 > _EPS, n1, 1.0)
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    bad |= n2[..., 0] <= _EPS
    if np.any(bad):
        if on_degenerate != "identity":
            raise DegenerateInput(f"{int(np.sum(bad))} degenerate 6D rotation(s)")
    b2 = u2 / np.where(n2 > _EPS, n2, 1.0)
    b3 = np.cross(b1, b2)
    out = np.stack([b1, b2, b3], axis=-1)
    if np.any(bad):
        out[bad] = np.eye(3)
    return out


def mat_to_r6(R):
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def geodesic_angle(Ra, Rb):
    """Angle in degrees of the relative rotation ``Ra^T Rb``, in [0, 180].

    Equal to ``arccos((trace - 1) / 2)`` but evaluated as ``atan2(sin, cos)``
    so that nearly equal rotations give errors near 1e-14 degrees rather
    than the 1e-6 floor of arccos near 1.
    """
    Ra = np.asarray(Ra, dtype=np.float64)
    Rb = np.asarray(Rb, dtype=np.float64)
    M = np.swapaxes(Ra, -1, -2) @ Rb
    cos = (M[..., 0, 0] + M[..., 1, 1] + M[..., 2, 2] - 1.0) / 2.0
    axis = np.stack([M[..., 2, 1] - M[..., 1, 2], M[..., 0, 2] - M[..., 2, 0], M[..., 1, 0] - M[..., 0, 1]], axis=-1)
    sin = 0.5 * np.linalg.norm(axis, axis=-1)
    return np.degrees(np.arctan2(sin, np.clip(cos, -1.0, 1.0)))


def relative_to_root(Rs, Rroot):
    """Express ``Rs`` in the root frame: ``Rroot^T Rs``."""
    Rs = np.asarray(Rs, dtype=np.float64)
    Rroot = np.asarray(Rroot, dtype=np.float64)
    return np.swapaxes(Rroot, -1, -2) @ Rs


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=np.float64)
    eye = np.eye(3)
    orth = np.abs(R @ np.swapaxes(R, -1, -2) - eye).max(axis=(-2, -1)) <= tol
    det = np.abs(np.linalg.det(R) - 1.0) <= tol
    return orth & det


def quat_to_mat(q):
    """Unit quaternion ``(w, x, y, z)`` to rotation matrix. Input is normalized first."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], axis=-1),
        np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], axis=-1),
        np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def mat_to_quat(R):
    """Rotation matrix to unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    R = np.asarray(R, dtype=np.float64)
    m = R.reshape(-1, 3, 3)
    out = np.empty((m.shape[0], 4))
    for n, r in enumerate(m):
        tr = np.trace(r)
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        q = np.asarray(q)
        out[n] = q if q[0] >= 0 else -q
    return out.reshape(R.shape[:-2] + (4,))


def random_rotations(n, rng=None):
    """Uniformly distributed rotations via normalized Gaussian quaternions."""
    rng = np.random.default_rng(rng)
    return quat_to_mat(rng.standard_normal((n, 4)))


def axis_angle_to_mat(axis, angle):
    """Rodrigues' formula. ``axis`` (..., 3) need not be unit; ``angle`` in radians."""
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * angle[..., None]
    q = np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)
    return quat_to_mat(q)


def rot_x(deg):
    return axis_angle_to_mat(np.broadcast_to([1.0, 0.0, 0.0], np.shape(deg) + (3,)), np.radians(deg))


def rot_y(deg):
    return axis_angle_to_mat(np.broadcast_to([0.0, 1.0, 0.0], np.shape(deg) + (3,)), np.radians(deg))


def rot_z(deg):
    return axis_angle_to_mat(np.broadcast_to([0.0, 0.0, 1.0], np.shape(deg) + (3,)), np.radians(deg))


def yaw_of(R):
    """Heading (radians) about the vertical +Y axis, read from the x column."""
    R = np.asarray(R, dtype=np.float64)
    # rot_y(a) maps x to (cos a, 0, -sin a)
    return np.arctan2(-R[..., 2, 0], R[..., 0, 0])


def remove_yaw(R):
    """Left-multiply by the inverse heading so the x column has no horizontal yaw."""
    yaw = yaw_of(R)
    return rot_y(-np.degrees(yaw)) @ np.asarray(R, dtype=np.float64)
