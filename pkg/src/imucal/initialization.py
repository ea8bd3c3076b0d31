"""Initial guesses for the calibration problem.

Relative orientations come from the rigid-body constraint on successive
gyroscope attitude increments, ``Δq_0 ⊗ q = q ⊗ Δq_n`` with ``q = ^{I0}_{In}q``,
solved as the null vector of the stacked operator differences. Angular
acceleration is the numerical derivative of the base gyroscope.
"""

from __future__ import annotations

import logging

import numpy as np

from . import geometry as geo
from .errors import ConfigError, DegenerateMotionError
from .state import CalibrationState

log = logging.getLogger(__name__)

DEGENERACY_THRESHOLD = 0.5


def relative_orientation_from_deltas(dq0, dqn):
    """Solve ``(L(Δq_0) - R(Δq_n)) q = 0`` in the least-squares sense.

    Parameters
    ----------
    dq0, dqn : (k, 4) arrays
        Attitude increments of the base and of IMU ``n``.

    Returns
    -------
    q : (4,) array
        Canonical ``^{I0}_{In}q``.
    score : float
        Ratio of the smallest to the second-smallest singular value of the
        stacked matrix; near 1 when the null vector is not unique.
    """
    dq0 = np.asarray(dq0, dtype=float)
    dqn = np.asarray(dqn, dtype=float)
    # Δq_n is conjugate to Δq_0, so their scalar parts agree; fix the double cover
    flip = np.sign(dq0[:, 3] * dqn[:, 3])
    flip[flip == 0] = 1.0
    dqn = dqn * flip[:, None]
    A = geo.left_matrix(dq0) - geo.right_matrix(dqn)
    # normal equations: 4x4 symmetric eigenproblem instead of an SVD of 4k x 4
    AtA = np.einsum("kij,kil->jl", A, A)
    evals, evecs = np.linalg.eigh(AtA)
    sv = np.sqrt(np.clip(evals, 0.0, None))
    score = 1.0 if sv[1] == 0.0 else float(sv[0] / sv[1])
    return geo.normalize(evecs[:, 0]), score


def init_relative_orientation(gyro_0, gyro_n, dt):
    """Relative orientation ``^{I0}_{In}q`` from two time-aligned gyro series.

    Raises
    ------
    DegenerateMotionError
        If the motion excites too few axes (score above 0.5).
    """
    gyro_0 = np.asarray(gyro_0, dtype=float)
    gyro_n = np.asarray(gyro_n, dtype=float)
    if gyro_0.shape != gyro_n.shape or len(gyro_0) < 2:
        raise ConfigError("need two time-aligned gyro series with at least 2 samples")
    dq0 = geo.delta_quat(gyro_0[:-1], dt)
    dqn = geo.delta_quat(gyro_n[:-1], dt)
    q, score = relative_orientation_from_deltas(dq0, dqn)
    if score > DEGENERACY_THRESHOLD:
        raise DegenerateMotionError("relative orientation is not observable from this motion", score)
    return q, score


def init_angular_acceleration(gyro_0, dt, q_g0=None):
    """Second-order finite-difference derivative of the base rate.

    Central differences in the interior and second-order one-sided
    differences at the ends; rotated into the base frame by ``q_g0``.
    """
    gyro_0 = np.asarray(gyro_0, dtype=float)
    if len(gyro_0) < 3:
        raise ConfigError("need at least 3 samples to differentiate")
    if not dt > 0:
        raise ConfigError("dt must be positive")
    alpha = np.gradient(gyro_0, dt, axis=0, edge_order=2)
    if q_g0 is not None:
        alpha = alpha @ geo.quat_to_rot(q_g0).T
    return alpha


def initial_state(data, rig_guess=None):
    """Initial calibration state for ``data``.

    Positions start at zero and misalignments at identity. Orientations come
    from :func:`init_relative_orientation` over the whole dataset; an IMU whose
    motion is degenerate keeps the identity and a warning is recorded in
    ``state.warnings``. A supplied ``rig_guess`` is used as is.
    """
    n = data.n_imus - 1
    if rig_guess is not None:
        if rig_guess.n_imus != data.n_imus:
            raise ConfigError("rig guess and data disagree on the number of IMUs")
        st = CalibrationState.from_rig(rig_guess)
    else:
        st = CalibrationState.identity(n)
        for i in range(1, n + 1):
            try:
                q, _ = init_relative_orientation(data.gyro[:, 0], data.gyro[:, i], data.dt)
                st.q[i - 1] = geo.quat_conj(q)
            except DegenerateMotionError as exc:
                msg = f"IMU {i}: {exc}; orientation initialized to identity"
                log.warning(msg)
                st.warnings.append(msg)
    st.alpha_init = init_angular_acceleration(data.gyro[:, 0], data.dt, st.q_g[0])
    return st
