"""Quaternion and rotation primitives.

Conventions used throughout the package:

* Quaternions are numpy arrays stored as ``[x, y, z, w]`` (vector part first).
* Multiplication is the Hamilton product, so ``C(a ⊗ b) = C(a) @ C(b)``.
* ``C(q)`` maps coordinates from the source frame into the target frame:
  ``p_B = C(q_BA) @ p_A``.
* Canonical sign: ``w >= 0``; when ``w == 0`` the first nonzero vector entry
  is made positive, so ``q`` and ``-q`` have identical storage.

All functions accept stacked inputs with arbitrary leading dimensions
(``(..., 4)`` quaternions, ``(..., 3)`` vectors) unless noted otherwise.
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])

_UNIT_TOL = 1e-9
_SMALL_ANGLE = 1e-8


def canonical(q):
    """Return ``q`` with the canonical sign (``w >= 0``)."""
    q = np.asarray(q, dtype=float)
    w = q[..., 3]
    xyz = q[..., :3]
    nz = xyz != 0.0
    first = np.take_along_axis(xyz, np.argmax(nz, axis=-1)[..., None], axis=-1)[..., 0]
    key = np.where(w != 0.0, w, first)
    sign = np.where(key < 0.0, -1.0, 1.0)
    return q * sign[..., None]


def normalize(q):
    """Scale ``q`` to unit norm and canonicalize its sign."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("cannot normalize a zero quaternion")
    return canonical(q / norm)


def _check_unit(q):
    err = np.abs(np.linalg.norm(q, axis=-1) - 1.0)
    if np.any(err > _UNIT_TOL):
        raise ValueError(f"quaternion is not normalized (norm error {np.max(err):.3e})")


def skew(v):
    """Skew-symmetric matrix with ``skew(v) @ u == cross(v, u)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def quat_to_rot(q):
    """Rotation matrix ``C(q)``.

    Raises ``ValueError`` if ``q`` deviates from unit norm by more than 1e-9.
    """
    q = np.asarray(q, dtype=float)
    _check_unit(q)
    x, y, z, w = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[..., 0, 1] = 2.0 * (x * y - z * w)
    out[..., 0, 2] = 2.0 * (x * z + y * w)
    out[..., 1, 0] = 2.0 * (x * y + z * w)
    out[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[..., 1, 2] = 2.0 * (y * z - x * w)
    out[..., 2, 0] = 2.0 * (x * z - y * w)
    out[..., 2, 1] = 2.0 * (y * z + x * w)
    out[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


def rot_to_quat(R):
    """Inverse of :func:`quat_to_rot` for a single 3x3 rotation matrix."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    # Shepperd: branch on the largest of (w, x, y, z) for stability
    cand = np.array([R[0, 0], R[1, 1], R[2, 2], tr])
    i = int(np.argmax(cand))
    if i == 3:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif i == 0:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif i == 1:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    return normalize(np.array(q))


def quat_mul(a, b):
    """Hamilton product ``a ⊗ b``, canonicalized."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    av, aw = a[..., :3], a[..., 3:]
    bv, bw = b[..., :3], b[..., 3:]
    vec = aw * bv + bw * av + np.cross(av, bv)
    scal = aw * bw - np.sum(av * bv, axis=-1, keepdims=True)
    return canonical(np.concatenate([vec, scal], axis=-1))


def quat_conj(q):
    """Conjugate (inverse rotation) of a unit quaternion."""
    q = np.asarray(q, dtype=float)
    return canonical(np.concatenate([-q[..., :3], q[..., 3:]], axis=-1))


def left_matrix(q):
    """4x4 matrix ``L(q)`` with ``L(a) @ b == a ⊗ b``."""
    q = np.asarray(q, dtype=float)
    out = np.empty(q.shape[:-1] + (4, 4))
    out[..., :3, :3] = q[..., 3, None, None] * np.eye(3) + skew(q[..., :3])
    out[..., :3, 3] = q[..., :3]
    out[..., 3, :3] = -q[..., :3]
    out[..., 3, 3] = q[..., 3]
    return out


def right_matrix(q):
    """4x4 matrix ``R(q)`` with ``R(b) @ a == a ⊗ b``."""
    q = np.asarray(q, dtype=float)
    out = np.empty(q.shape[:-1] + (4, 4))
    out[..., :3, :3] = q[..., 3, None, None] * np.eye(3) - skew(q[..., :3])
    out[..., :3, 3] = q[..., :3]
    out[..., 3, :3] = -q[..., :3]
    out[..., 3, 3] = q[..., 3]
    return out


def quat_exp(phi):
    """Unit quaternion of the rotation vector ``phi`` (rad)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi, axis=-1, keepdims=True)
    small = angle < _SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    vec = np.where(small, 0.5 * phi, phi / safe * np.sin(0.5 * angle))
    scal = np.where(small, 1.0, np.cos(0.5 * angle))
    return normalize(np.concatenate([vec, scal], axis=-1))


def quat_log(q):
    """Rotation vector (rad) of a unit quaternion; inverse of :func:`quat_exp`."""
    q = canonical(q)
    v, w = q[..., :3], q[..., 3]
    s = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(s, w)
    small = s < _SMALL_ANGLE
    scale = np.where(small, 2.0, angle / np.where(small, 1.0, s))
    return v * scale[..., None]


def delta_quat(omega, dt):
    """Rotation accumulated over ``dt`` at constant angular rate ``omega``.

    ``[omega/|omega| sin(|omega| dt / 2), cos(|omega| dt / 2)]``, with the
    first-order limit ``(omega dt / 2, 1)`` below ``|omega| dt < 1e-8``.
    """
    if np.any(np.asarray(dt) <= 0):
        raise ValueError("dt must be positive")
    return quat_exp(np.asarray(omega, dtype=float) * dt)


def rotation_angle(q):
    """Rotation angle of ``q`` in radians, in ``[0, pi]``."""
    return np.linalg.norm(quat_log(q), axis=-1)


def angle_between(a, b):
    """Angle in degrees of the rotation taking ``b`` to ``a``."""
    return np.degrees(rotation_angle(quat_mul(quat_conj(b), a)))


def _axis_quat(angle, axis):
    q = np.zeros(np.shape(angle) + (4,))
    q[..., axis] = np.sin(0.5 * np.asarray(angle))
    q[..., 3] = np.cos(0.5 * np.asarray(angle))
    return q


def euler_xyz_to_quat(angles_deg):
    """Quaternion with ``C(q) = Rz(gamma) @ Ry(beta) @ Rx(alpha)``.

    ``angles_deg = (alpha, beta, gamma)`` in degrees, X applied first.
    """
    a = np.radians(np.asarray(angles_deg, dtype=float))
    qx = _axis_quat(a[..., 0], 0)
    qy = _axis_quat(a[..., 1], 1)
    qz = _axis_quat(a[..., 2], 2)
    return normalize(quat_mul(qz, quat_mul(qy, qx)))


def quat_to_euler_xyz(q):
    """Inverse of :func:`euler_xyz_to_quat`; returns degrees.

    The pitch angle lies in [-90, 90]; half-turns about y come back as the
    equivalent ``(180, 0, 180)`` triple.
    """
    R = quat_to_rot(q)
    cb = np.hypot(R[..., 0, 0], R[..., 1, 0])
    beta = np.arctan2(-R[..., 2, 0], cb)
    alpha = np.arctan2(R[..., 2, 1], R[..., 2, 2])
    gamma = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    # gimbal lock: only alpha -/+ gamma is defined, put it all in alpha
    locked = cb < 1e-9
    if np.any(locked):
        alpha = np.where(locked, np.arctan2(-R[..., 2, 0] * R[..., 0, 1], R[..., 1, 1]), alpha)
        gamma = np.where(locked, 0.0, gamma)
    return np.degrees(np.stack([alpha, beta, gamma], axis=-1))


def _axis_rot(a, i, j):
    a = np.asarray(a, dtype=float)
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    k = 3 - i - j
    out[..., k, k] = 1.0
    out[..., i, i] = c
    out[..., j, j] = c
    out[..., i, j] = -s
    out[..., j, i] = s
    return out


def rot_x(a):
    """Elementary rotation matrix about x (radians, stacked)."""
    return _axis_rot(a, 1, 2)


def rot_y(a):
    return _axis_rot(a, 2, 0)


def rot_z(a):
    return _axis_rot(a, 0, 1)
