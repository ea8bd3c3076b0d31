"""Intra-segment and bridging residuals with their covariances.

Two evaluation paths share the same model:

* per-block functions (:func:`residual_accel`, :func:`residual_gyro`, ...)
  returning :class:`ResidualBlock` objects, written for clarity;
* :func:`linearize_segment`, which evaluates every residual of a segment
  and its analytic Jacobian in vectorized form for the solver.

Timestep indices ``k`` are 0-based within a segment. All covariances are
isotropic, hence whitening reduces to a scalar factor per residual kind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import ConfigError
from .state import PsiLayout, ThetaLayout

ACCEL, GYRO = 0, 1
KINDS = ("accel", "gyro", "bias_a", "bias_g", "bridge_a", "bridge_g")


# ---------------------------------------------------------------- covariances


def accel_variance(noise):
    """Per-axis variance of ``r_a``: two accelerometer terms, squared-rate and α terms."""
    s_w = noise.sigma_g ** 2 / noise.dt
    return 2.0 * noise.sigma_a ** 2 / noise.dt + 2.0 * s_w ** 2 + noise.alpha_sigma ** 2


def gyro_variance(noise):
    return 2.0 * noise.sigma_g ** 2 / noise.dt


def bias_step_variance(noise, sensor):
    sig = noise.sigma_ba if sensor == ACCEL else noise.sigma_bg
    return sig ** 2 * noise.dt


def bridge_variance(noise, sensor, gap, K):
    """Random-walk variance accumulated over ``gap`` segments of ``K`` steps."""
    if gap < 1:
        raise ConfigError("bridged segments must be distinct and ascending")
    sig = noise.sigma_ba if sensor == ACCEL else noise.sigma_bg
    return sig ** 2 * gap * K * noise.dt


def whitening_weights(noise):
    """``(w_a, w_g, w_ba, w_bg)``: inverse standard deviations of each residual kind."""
    out = []
    for var in (accel_variance(noise), gyro_variance(noise),
                bias_step_variance(noise, ACCEL), bias_step_variance(noise, GYRO)):
        if not var > 0.0:
            raise ConfigError("residual covariance is not positive definite; noise parameters must be positive")
        out.append(1.0 / np.sqrt(var))
    return tuple(out)


def block_count(n, K):
    """Intra-segment residual blocks: ``2NK + 2(N+1)(K-1)``."""
    return 2 * n * K + 2 * (n + 1) * (K - 1)


# ---------------------------------------------------------------- per-block API


@dataclass(frozen=True)
class ResidualBlock:
    """One 3-vector residual, its covariance and the parameter slots it touches."""

    kind: str
    value: np.ndarray
    covariance: np.ndarray
    slots: tuple

    @property
    def whitened(self):
        L = np.linalg.cholesky(self.covariance)
        return np.linalg.solve(L, self.value)

    @property
    def mahalanobis(self):
        return float(self.value @ np.linalg.solve(self.covariance, self.value))


def _corrected(state, segment, n, k):
    ba = state.bias_a(segment.index)[k, n]
    bg = state.bias_g(segment.index)[k, n]
    return segment.accel[k, n] - ba, segment.gyro[k, n] - bg


def residual_accel(state, segment, n, k, noise):
    """``r_a = R^T {v + [G u]x^2 p + [R α]x p} - (ã_0 - b_a0)`` for IMU ``n >= 1``."""
    if not 1 <= n <= state.n:
        raise ConfigError("accelerometer residuals exist for IMUs 1..N only")
    R = geo.quat_to_rot(state.q[n - 1])
    G = geo.quat_to_rot(state.q_g[n])
    p = state.p[n - 1]
    alpha = state.alpha(segment.index)[k]
    v, u = _corrected(state, segment, n, k)
    v0, _ = _corrected(state, segment, 0, k)
    w = G @ u
    sw = geo.skew(w)
    inner = v + sw @ sw @ p + geo.skew(R @ alpha) @ p
    value = R.T @ inner - v0
    s = segment.index
    slots = (("p", n), ("q", n), ("g", n), ("ba", s, k, n), ("bg", s, k, n), ("ba", s, k, 0), ("alpha", s, k))
    return ResidualBlock("accel", value, accel_variance(noise) * np.eye(3), slots)


def residual_gyro(state, segment, n, k, noise):
    """``r_g = R^T G (ω̃_n - b_gn) - G_0 (ω̃_0 - b_g0)`` for IMU ``n >= 1``."""
    if not 1 <= n <= state.n:
        raise ConfigError("gyroscope residuals exist for IMUs 1..N only")
    R = geo.quat_to_rot(state.q[n - 1])
    G = geo.quat_to_rot(state.q_g[n])
    G0 = geo.quat_to_rot(state.q_g[0])
    _, u = _corrected(state, segment, n, k)
    _, u0 = _corrected(state, segment, 0, k)
    value = R.T @ G @ u - G0 @ u0
    s = segment.index
    slots = (("q", n), ("g", n), ("g", 0), ("bg", s, k, n), ("bg", s, k, 0))
    return ResidualBlock("gyro", value, gyro_variance(noise) * np.eye(3), slots)


def _bias(state, seg, sensor):
    return state.bias_a(seg) if sensor == ACCEL else state.bias_g(seg)


def residual_bias_step(state, seg, n, k, sensor, noise):
    """``b_{k+1} - b_k`` of IMU ``n`` inside segment ``seg`` (``0 <= k < K-1``)."""
    b = _bias(state, seg, sensor)
    if not 0 <= k < len(b) - 1:
        raise ConfigError("bias step index out of range")
    kind = "bias_a" if sensor == ACCEL else "bias_g"
    name = "ba" if sensor == ACCEL else "bg"
    cov = bias_step_variance(noise, sensor) * np.eye(3)
    return ResidualBlock(kind, b[k + 1, n] - b[k, n], cov, ((name, seg, k + 1, n), (name, seg, k, n)))


def residual_bias_bridge(state, seg_prev, seg_next, n, sensor, noise):
    """First bias of ``seg_next`` minus last bias of ``seg_prev``."""
    if seg_next <= seg_prev:
        raise ConfigError("bridged segments must be distinct and ascending")
    b0 = _bias(state, seg_prev, sensor)
    b1 = _bias(state, seg_next, sensor)
    K = len(b0)
    kind = "bridge_a" if sensor == ACCEL else "bridge_g"
    name = "ba" if sensor == ACCEL else "bg"
    cov = bridge_variance(noise, sensor, seg_next - seg_prev, K) * np.eye(3)
    return ResidualBlock(kind, b1[0, n] - b0[-1, n], cov, ((name, seg_next, 0, n), (name, seg_prev, K - 1, n)))


def segment_residuals(state, segment, noise):
    """Every intra-segment block in the frozen order.

    For ``k`` ascending and ``n`` ascending: ``r_a`` then ``r_g``. Then bias
    steps for ``k`` ascending, ``n`` ascending (base included): accelerometer
    then gyroscope.
    """
    blocks = []
    for k in range(segment.K):
        for n in range(1, state.n + 1):
            blocks.append(residual_accel(state, segment, n, k, noise))
            blocks.append(residual_gyro(state, segment, n, k, noise))
    for k in range(segment.K - 1):
        for n in range(state.n + 1):
            blocks.append(residual_bias_step(state, segment.index, n, k, ACCEL, noise))
            blocks.append(residual_bias_step(state, segment.index, n, k, GYRO, noise))
    return blocks


# ---------------------------------------------------------------- vectorized


@dataclass
class SegmentLinearization:
    """Whitened residuals and Jacobians of one segment.

    ``ra``/``rg`` are ``(K, N, 3)``; ``steps`` is ``(K-1, 6(N+1))`` holding
    whitened bias differences in ψ bias-column order. ``Ja_theta`` is
    ``(K, N, 3, dim Θ)`` and ``Ja_psi`` ``(K, N, 3, dim ψ)`` (same for ``g``),
    dense with structural zeros. ``step_w`` holds the whitening weight of each
    bias column.
    """

    index: int
    ra: np.ndarray
    rg: np.ndarray
    steps: np.ndarray
    step_w: np.ndarray
    Ja_theta: np.ndarray | None = None
    Ja_psi: np.ndarray | None = None
    Jg_theta: np.ndarray | None = None
    Jg_psi: np.ndarray | None = None

    @property
    def K(self):
        return self.ra.shape[0]

    def cost(self):
        return float(np.sum(self.ra ** 2) + np.sum(self.rg ** 2) + np.sum(self.steps ** 2))


def _mT(a):
    return np.swapaxes(a, -1, -2)


def linearize_segment(state, segment, noise, jacobian=True):
    """Vectorized evaluation of all intra-segment residuals of ``segment``.

    Rotation Jacobians use right perturbations; see :mod:`imucal.state`.
    """
    N = state.n
    K = segment.K
    w_a, w_g, w_ba, w_bg = whitening_weights(noise)
    psi = state.nuisance[segment.index]
    ba = psi[:, : 3 * (N + 1)].reshape(K, N + 1, 3)
    bg = psi[:, 3 * (N + 1): 6 * (N + 1)].reshape(K, N + 1, 3)
    al = psi[:, 6 * (N + 1):]

    R, Gall = state.rotations()
    G, G0 = Gall[1:], Gall[0]
    p = state.p

    u = segment.gyro - bg
    v = segment.accel - ba
    un = u[:, 1:]
    w = np.einsum("nij,knj->kni", G, un)
    s = np.einsum("nij,kj->kni", R, al)
    inner = v[:, 1:] + np.cross(w, np.cross(w, p)) + np.cross(s, p)
    ahat = np.einsum("nji,knj->kni", R, inner)
    ra = ahat - v[:, :1, :]
    y = np.einsum("nji,knj->kni", R, w)
    w0 = u[:, 0] @ G0.T
    rg = y - w0[:, None, :]

    step_w = np.concatenate([np.full(3 * (N + 1), w_ba), np.full(3 * (N + 1), w_bg)])
    steps = (psi[1:, : 6 * (N + 1)] - psi[:-1, : 6 * (N + 1)]) * step_w
    lin = SegmentLinearization(segment.index, ra * w_a, rg * w_g, steps, step_w)
    if not jacobian:
        return lin

    tl, pl = ThetaLayout(N), PsiLayout(N)
    d = pl.dim
    eye = np.eye(3)
    Sw = geo.skew(w)
    Ss = geo.skew(s)
    Rt = _mT(R)
    RtPR = Rt @ geo.skew(p) @ R
    wp = np.einsum("kni,ni->kn", w, p)
    M = (w[..., :, None] * p[None, :, None, :] + wp[..., None, None] * eye
         - 2.0 * p[None, :, :, None] * w[..., None, :])
    RtM = Rt[None] @ M
    Su = geo.skew(un)
    RtG = Rt @ G

    Ja_t = np.zeros((K, N, 3, tl.dim))
    Ja_p = np.zeros((K, N, 3, d))
    Jg_t = np.zeros((K, N, 3, tl.dim))
    Jg_p = np.zeros((K, N, 3, d))
    Jp = Rt[None] @ (Sw @ Sw + Ss)
    Jq_a = geo.skew(ahat) + RtPR[None] @ geo.skew(al)[:, None]
    Jbg_a = -RtM @ G[None]
    Jg_a = Jbg_a @ Su
    Jq_g = geo.skew(y)
    Jg_g = -RtG[None] @ Su
    Jg0_g = G0 @ geo.skew(u[:, 0])
    for i in range(N):
        n = i + 1
        Ja_t[:, i, :, tl.p(n):tl.p(n) + 3] = Jp[:, i]
        Ja_t[:, i, :, tl.q(n):tl.q(n) + 3] = Jq_a[:, i]
        Ja_t[:, i, :, tl.g(n):tl.g(n) + 3] = Jg_a[:, i]
        Ja_p[:, i, :, pl.ba(n):pl.ba(n) + 3] = -Rt[i]
        Ja_p[:, i, :, pl.bg(n):pl.bg(n) + 3] = Jbg_a[:, i]
        Ja_p[:, i, :, pl.ba(0):pl.ba(0) + 3] = eye
        Ja_p[:, i, :, pl.alpha:pl.alpha + 3] = -RtPR[i]

        Jg_t[:, i, :, tl.q(n):tl.q(n) + 3] = Jq_g[:, i]
        Jg_t[:, i, :, tl.g(n):tl.g(n) + 3] = Jg_g[:, i]
        Jg_t[:, i, :, tl.g(0):tl.g(0) + 3] = Jg0_g
        Jg_p[:, i, :, pl.bg(n):pl.bg(n) + 3] = -RtG[i]
        Jg_p[:, i, :, pl.bg(0):pl.bg(0) + 3] = G0

    lin.Ja_theta = Ja_t * w_a
    lin.Ja_psi = Ja_p * w_a
    lin.Jg_theta = Jg_t * w_g
    lin.Jg_psi = Jg_p * w_g
    return lin


def bridge_weights(noise, gap, K):
    """Whitening weights of bias columns for a bridge spanning ``gap`` segments."""
    w_a = 1.0 / np.sqrt(bridge_variance(noise, ACCEL, gap, K))
    w_g = 1.0 / np.sqrt(bridge_variance(noise, GYRO, gap, K))
    return w_a, w_g
