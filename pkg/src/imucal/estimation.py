"""Nonlinear least-squares calibration over a set of selected segments.

The problem stacks, for every selected segment, the whitened intra-segment
residuals, followed by bridge residuals tying the last bias state of each
selected segment to the first bias state of the next selected one.

Normal equations are formed directly from the per-timestep Jacobian blocks.
The nuisance block is banded, so ψ is eliminated with a banded Cholesky and
only a small dense system in Θ remains.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import _banded
from ._parallel import pmap
from .errors import ConfigError, NumericalError
from .residuals import ACCEL, GYRO, block_count, bridge_weights, linearize_segment
from .state import PsiLayout

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LMOptions:
    """Levenberg-Marquardt settings.

    Damping is Marquardt's: ``H + mu * diag(H)``, i.e. ``mu`` added to the
    unit diagonal of the Jacobi-scaled system. ``gtol`` applies to the scaled
    gradient ``g_i / sqrt(H_ii)``.
    """

    max_iterations: int = 100
    mu0: float = 1e-4
    mu_up: float = 10.0
    mu_down: float = 10.0
    mu_max: float = 1e12
    mu_min: float = 1e-12
    ftol: float = 1e-10
    gtol: float = 1e-10
    xtol: float = 1e-12

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class CalibrationReport:
    iterations: int
    accepted: int
    initial_cost: float
    final_cost: float
    reason: str
    stationary: bool
    wall_time: float
    cost_trace: list = field(default_factory=list)
    n_segments: int = 0
    residual_block_evals: int = 0

    def to_dict(self):
        return dict(self.__dict__)


class LeastSquaresProblem:
    """Selected segments, noise model and the frozen row/column layout.

    Columns are ``[Θ | ψ]`` with ψ ordered by selected segment, then timestep.
    Rows follow :func:`imucal.residuals.segment_residuals` per segment, then
    bridge blocks for each adjacent pair, IMU ascending, accelerometer first.
    """

    def __init__(self, segments, noise, n):
        self.segments = list(segments)
        self.noise = noise
        self.n = n
        self.K = self.segments[0].K
        self.index = [s.index for s in self.segments]
        self.bridges = list(zip(self.index[:-1], self.index[1:]))
        self.psi = PsiLayout(n)
        self.theta_dim = 6 * n + 3 * (n + 1)
        self.psi_dim = len(self.segments) * self.K * self.psi.dim

    @property
    def n_blocks(self):
        return len(self.segments) * block_count(self.n, self.K) + len(self.bridges) * 2 * (self.n + 1)

    @property
    def n_bridge_blocks(self):
        return len(self.bridges) * 2 * (self.n + 1)

    @property
    def shape(self):
        return 3 * self.n_blocks, self.theta_dim + self.psi_dim

    def psi_offset(self, m):
        """First ψ column of the ``m``-th selected segment."""
        return self.theta_dim + m * self.K * self.psi.dim


def assemble(segments, state0, noise):
    """Build the problem for ``segments`` (sorted, unique, equal length)."""
    segments = list(segments)
    if not segments:
        raise ConfigError("at least one segment is required")
    idx = [s.index for s in segments]
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise ConfigError("segments must be sorted and unique")
    if len({s.K for s in segments}) != 1:
        raise ConfigError("segments must have equal length")
    if segments[0].n_imus != state0.n + 1:
        raise ConfigError("state and measurements disagree on the number of IMUs")
    if segments[0].K < 2:
        raise ConfigError("segments need at least two timesteps")
    if len(segments[0].t) > 1:
        dt_data = float(segments[0].t[1] - segments[0].t[0])
        if abs(dt_data - noise.dt) > 1e-6 * noise.dt + 1e-12:
            raise ConfigError(f"sampling interval {dt_data:g} s does not match noise dt {noise.dt:g} s")
    return LeastSquaresProblem(segments, noise, state0.n)


# ---------------------------------------------------------------- evaluation


@dataclass
class Linearization:
    segments: list
    bridges: list  # (whitened residual (6(N+1),), weights (6(N+1),))

    def cost(self):
        c = sum(s.cost() for s in self.segments)
        return float(c + sum(np.sum(r ** 2) for r, _ in self.bridges))


def _bias_cols(n):
    return 6 * (n + 1)


def linearize(problem, state, jacobian=True):
    segs = pmap(lambda s: linearize_segment(state, s, problem.noise, jacobian), problem.segments)
    bridges = []
    nb = _bias_cols(problem.n)
    half = nb // 2
    for a, b in problem.bridges:
        w_a, w_g = bridge_weights(problem.noise, b - a, problem.K)
        w = np.concatenate([np.full(half, w_a), np.full(half, w_g)])
        r = (state.nuisance[b][0, :nb] - state.nuisance[a][-1, :nb]) * w
        bridges.append((r, w))
    return Linearization(segs, bridges)


def _prepared(problem, state):
    missing = [i for i in problem.index if i not in state.nuisance]
    if missing:
        state = state.copy().ensure_segments(problem.segments)
    return state


def evaluate_cost(problem, state):
    """Sum of squared whitened residuals."""
    state = _prepared(problem, state)
    return linearize(problem, state, jacobian=False).cost()


def residual_vector(problem, state):
    """Whitened residuals stacked in the frozen row order."""
    state = _prepared(problem, state)
    lin = linearize(problem, state, jacobian=False)
    N = problem.n
    out = []
    for sl in lin.segments:
        out.append(np.stack([sl.ra, sl.rg], axis=2).reshape(-1))
        # steps: (K-1, [ba_0..ba_N, bg_0..bg_N]) -> (K-1, n, sensor, 3)
        st = sl.steps.reshape(-1, 2, N + 1, 3).transpose(0, 2, 1, 3)
        out.append(st.reshape(-1))
    for r, _ in lin.bridges:
        out.append(r.reshape(2, N + 1, 3).transpose(1, 0, 2).reshape(-1))
    return np.concatenate(out)


def _structural_cols(problem, n, kind):
    """Θ and per-timestep ψ columns touched by ``r_a`` (kind 0) or ``r_g`` (kind 1) of IMU ``n``."""
    N, pl = problem.n, problem.psi
    t3 = np.arange(3)
    if kind == ACCEL:
        tc = [3 * (n - 1), 3 * N + 3 * (n - 1), 6 * N + 3 * n]
        pc = [pl.ba(n), pl.bg(n), pl.ba(0), pl.alpha]
    else:
        tc = [3 * N + 3 * (n - 1), 6 * N + 3 * n, 6 * N]
        pc = [pl.bg(n), pl.bg(0)]
    return (np.sort(np.concatenate([c + t3 for c in tc])), np.sort(np.concatenate([c + t3 for c in pc])))


def jacobian(problem, state):
    """Whitened sparse Jacobian (CSR) with the frozen pattern ``[Θ | ψ]``."""
    state = _prepared(problem, state)
    lin = linearize(problem, state, jacobian=True)
    N, K, P = problem.n, problem.K, problem.theta_dim
    d = problem.psi.dim
    nbc = _bias_cols(N)
    rows, cols, vals = [], [], []
    bc = block_count(N, K)

    for m, sl in enumerate(lin.segments):
        row0 = 3 * bc * m
        c0 = problem.psi_offset(m)
        # r_a / r_g: row block ((k N + i) 2 + kind)
        kk, rr = np.meshgrid(np.arange(K), np.arange(3), indexing="ij")
        for kind, (Jt, Jp) in enumerate(((sl.Ja_theta, sl.Ja_psi), (sl.Jg_theta, sl.Jg_psi))):
            for i in range(N):
                tcols, pcols = _structural_cols(problem, i + 1, kind)
                ri = (row0 + 3 * ((kk * N + i) * 2 + kind) + rr).reshape(-1)
                rows.append(np.repeat(ri, len(tcols)))
                cols.append(np.tile(tcols, ri.size))
                vals.append(Jt[:, i][..., tcols].reshape(-1))
                pc = c0 + np.arange(K)[:, None, None] * d + pcols[None, None, :] + np.zeros((1, 3, 1), dtype=int)
                rows.append(np.repeat(ri, len(pcols)))
                cols.append(pc.reshape(-1))
                vals.append(Jp[:, i][..., pcols].reshape(-1))
        # bias steps: block 2NK + (k(N+1)+n) 2 + s
        for k in range(K - 1):
            for n in range(N + 1):
                for s in (ACCEL, GYRO):
                    c = s * (nbc // 2) + 3 * n
                    b = 2 * N * K + (k * (N + 1) + n) * 2 + s
                    r = row0 + 3 * b + np.arange(3)
                    w = sl.step_w[c:c + 3]
                    rows += [r, r]
                    cols += [c0 + (k + 1) * d + c + np.arange(3), c0 + k * d + c + np.arange(3)]
                    vals += [w, -w]

    base = 3 * bc * len(lin.segments)
    for j, (r_w, (a, b)) in enumerate(zip(lin.bridges, problem.bridges)):
        _, w = r_w
        ma, mb = problem.index.index(a), problem.index.index(b)
        for n in range(N + 1):
            for s in (ACCEL, GYRO):
                c = s * (nbc // 2) + 3 * n
                blk = (j * (N + 1) + n) * 2 + s
                r = base + 3 * blk + np.arange(3)
                ww = w[c:c + 3]
                rows += [r, r]
                cols += [problem.psi_offset(mb) + c + np.arange(3),
                         problem.psi_offset(ma) + (K - 1) * d + c + np.arange(3)]
                vals += [ww, -ww]

    J = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=problem.shape)
    return J.tocsr()


# ---------------------------------------------------------------- normal equations


@dataclass
class NormalEquations:
    """``H = J^T J`` and ``g = J^T r`` split into Θ and banded ψ parts."""

    A: np.ndarray  # (P, P)
    B: np.ndarray  # (T, P, d)  Θ-ψ coupling per timestep
    band: _banded.BandedNuisance
    g_theta: np.ndarray
    g_psi: np.ndarray  # (T, d)

    @property
    def Bt(self):
        T, P, d = self.B.shape
        return self.B.transpose(0, 2, 1).reshape(T * d, P)


def segment_normal_blocks(sl):
    """Intra-segment normal-equation blocks of one linearized segment."""
    Jt = np.concatenate([sl.Ja_theta, sl.Jg_theta], axis=1)  # (K, 2N, 3, P)
    Jp = np.concatenate([sl.Ja_psi, sl.Jg_psi], axis=1)
    r = np.concatenate([sl.ra, sl.rg], axis=1)  # (K, 2N, 3)
    K = Jt.shape[0]
    nb = sl.steps.shape[1]
    Jt2 = Jt.reshape(K, -1, Jt.shape[-1])
    Jp2 = Jp.reshape(K, -1, Jp.shape[-1])
    r2 = r.reshape(K, -1)
    JtT = Jt2.transpose(0, 2, 1)
    A = Jt2.reshape(-1, Jt2.shape[-1]).T @ Jt2.reshape(-1, Jt2.shape[-1])
    B = JtT @ Jp2
    D = Jp2.transpose(0, 2, 1) @ Jp2
    gt = Jt2.reshape(-1, Jt2.shape[-1]).T @ r2.reshape(-1)
    gp = (Jp2.transpose(0, 2, 1) @ r2[..., None])[..., 0]
    w2 = sl.step_w ** 2
    idx = np.arange(nb)
    D[:-1, idx, idx] += w2
    D[1:, idx, idx] += w2
    couple = np.zeros((K - 1, Jp.shape[-1]))
    couple[:, :nb] = -w2
    ws = sl.steps * sl.step_w
    gp[1:, :nb] += ws
    gp[:-1, :nb] -= ws
    return A, B, D, couple, gt, gp


def normal_equations(problem, lin):
    P, d, K = problem.theta_dim, problem.psi.dim, problem.K
    M = len(lin.segments)
    A = np.zeros((P, P))
    B = np.empty((M * K, P, d))
    D = np.empty((M * K, d, d))
    couple = np.zeros((M * K - 1, d))
    gt = np.zeros(P)
    gp = np.empty((M * K, d))
    blocks = pmap(segment_normal_blocks, lin.segments)
    for m, (a, b, dd, c, g1, g2) in enumerate(blocks):
        sl = slice(m * K, (m + 1) * K)
        A += a
        B[sl] = b
        D[sl] = dd
        couple[m * K: (m + 1) * K - 1] = c
        gt += g1
        gp[sl] = g2
    nb = _bias_cols(problem.n)
    for m, (r, w) in enumerate(lin.bridges):
        t0, t1 = (m + 1) * K - 1, (m + 1) * K
        w2 = w ** 2
        D[t0, np.arange(nb), np.arange(nb)] += w2
        D[t1, np.arange(nb), np.arange(nb)] += w2
        couple[t0, :nb] = -w2
        gp[t1, :nb] += r * w
        gp[t0, :nb] -= r * w
    return NormalEquations(A, B, _banded.BandedNuisance(D, couple), gt, gp)


def _damped_step(ne, mu):
    """Scaled Marquardt step via Schur elimination of ψ."""
    s_t = _banded.jacobi_scale(np.diag(ne.A))
    s_p = _banded.jacobi_scale(ne.band.diagonal())
    As = ne.A * s_t[:, None] * s_t[None, :] + mu * np.eye(len(s_t))
    Bts = ne.Bt * s_p[:, None] * s_t[None, :]
    gts = ne.g_theta * s_t
    gps = ne.g_psi.reshape(-1) * s_p
    fac = _banded.ScaledFactor(ne.band, s_p, mu)
    Y = fac.solve_scaled(np.concatenate([Bts, gps[:, None]], axis=1))
    S = As - Bts.T @ Y[:, :-1]
    rhs = -gts + Bts.T @ Y[:, -1]
    try:
        dts = cho_solve(cho_factor(0.5 * (S + S.T)), rhs)
    except LinAlgError as exc:
        raise NumericalError(f"reduced normal matrix is not positive definite: {exc}") from exc
    dps = fac.solve_scaled(-gps - Bts @ dts)
    return dts * s_t, dps * s_p, np.concatenate([dts, dps])


def scaled_gradient_norm(ne):
    s_t = _banded.jacobi_scale(np.diag(ne.A))
    s_p = _banded.jacobi_scale(ne.band.diagonal())
    g1 = np.max(np.abs(ne.g_theta * s_t)) if len(s_t) else 0.0
    g2 = np.max(np.abs(ne.g_psi.reshape(-1) * s_p))
    return float(max(g1, g2))


def _split_psi(problem, dpsi):
    K, d = problem.K, problem.psi.dim
    blocks = dpsi.reshape(len(problem.segments), K, d)
    return {idx: blocks[m] for m, idx in enumerate(problem.index)}


def calibrate(segments, state0, noise, options=None):
    """Levenberg-Marquardt minimization of the stacked problem.

    Parameters
    ----------
    segments : list of Segment
        Selected segments in ascending index order.
    state0 : CalibrationState
        Starting point. Nuisance for segments it does not cover is seeded
        from ``state0.alpha_init`` with zero biases.
    noise : NoiseSpec
    options : LMOptions, optional

    Returns
    -------
    state : CalibrationState
    report : CalibrationReport
        ``stationary`` is set when damping escalated past ``mu_max`` without
        finding a decrease.

    Raises
    ------
    NumericalError
        On non-finite residuals at the starting point.
    """
    opts = options or LMOptions()
    t_start = time.perf_counter()
    problem = assemble(segments, state0, noise)
    state = state0.copy().ensure_segments(problem.segments)
    # drop nuisance of segments outside the problem, so the state matches it
    state.nuisance = {i: state.nuisance[i] for i in problem.index}

    lin = linearize(problem, state)
    evals = problem.n_blocks
    cost = lin.cost()
    if not np.isfinite(cost):
        raise NumericalError("non-finite residuals at the starting point")
    cost0 = cost
    trace = [cost]
    mu = opts.mu0
    reason = "max_iterations"
    stationary = False
    accepted = 0
    it = 0
    while it < opts.max_iterations:
        ne = normal_equations(problem, lin)
        if scaled_gradient_norm(ne) < opts.gtol:
            reason = "gradient"
            break
        improved = False
        while True:
            it += 1
            d_theta, d_psi, scaled = _damped_step(ne, mu)
            cand = state.retract(d_theta, _split_psi(problem, d_psi))
            cand_lin = linearize(problem, cand)
            evals += problem.n_blocks
            new = cand_lin.cost()
            if np.isfinite(new) and new < cost:
                improved = True
                break
            mu *= opts.mu_up
            if mu > opts.mu_max:
                break
            if it >= opts.max_iterations:
                break
        if not improved:
            if mu > opts.mu_max:
                reason, stationary = "stationary", True
            break
        rel = (cost - new) / max(cost, np.finfo(float).tiny)
        state, lin, cost = cand, cand_lin, new
        trace.append(cost)
        accepted += 1
        mu = max(mu / opts.mu_down, opts.mu_min)
        if rel < opts.ftol:
            reason = "cost"
            break
        if np.max(np.abs(scaled)) < opts.xtol:
            reason = "step"
            break

    report = CalibrationReport(
        iterations=it,
        accepted=accepted,
        initial_cost=float(cost0),
        final_cost=float(cost),
        reason=reason,
        stationary=stationary,
        wall_time=time.perf_counter() - t_start,
        cost_trace=[float(c) for c in trace],
        n_segments=len(problem.segments),
        residual_block_evals=evals,
    )
    log.debug("calibrate: %d segments, %s after %d iterations, cost %.6g -> %.6g",
              report.n_segments, reason, it, cost0, cost)
    return state, report
