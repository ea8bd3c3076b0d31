"""Sensitivity of segment information, reprojection error, benchmarks.

The sensitivity sweep compares per-segment information at reference
extrinsics with the same series after perturbing positions and
orientations; agreement is measured by Spearman rank correlation, since
selection depends on the ordering of information rather than its scale.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import geometry as geo
from . import information as info_mod
from . import simulator as sim
from ._parallel import pmap
from .errors import ConfigError, SingularInformationError, UndefinedCorrelationError
from .initialization import init_angular_acceleration
from .residuals import linearize_segment, whitening_weights
from .state import CalibrationState

_SWEEP_STREAM = 104729


# ---------------------------------------------------------------- statistics


def spearman(x, y):
    """Spearman rank correlation with average ranks for ties.

    Raises
    ------
    UndefinedCorrelationError
        If either series is constant.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) != len(y):
        raise ConfigError("series must have equal length")
    if len(x) < 3:
        raise ConfigError("need at least 3 paired values")
    rx = rankdata(x) - (len(x) + 1) / 2.0
    ry = rankdata(y) - (len(y) + 1) / 2.0
    den = np.sqrt(np.dot(rx, rx) * np.dot(ry, ry))
    if den == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant series")
    return float(np.clip(np.dot(rx, ry) / den, -1.0, 1.0))


def fit_power_law(x, y):
    """Least-squares ``log y = a + b log x``; returns ``(b, r_squared)``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    b, a = np.polyfit(lx, ly, 1)
    resid = ly - (a + b * lx)
    ss = np.sum((ly - ly.mean()) ** 2)
    return float(b), float(1.0 - np.sum(resid ** 2) / ss) if ss > 0 else 1.0


def fit_scaled(x, y, power):
    """R² of the one-parameter fit ``y = c x**power``; returns ``(c, r_squared)``."""
    x = np.asarray(x, float) ** power
    y = np.asarray(y, float)
    c = float(np.dot(x, y) / np.dot(x, x))
    ss = np.sum((y - y.mean()) ** 2)
    return c, float(1.0 - np.sum((y - c * x) ** 2) / ss) if ss > 0 else 1.0


# ---------------------------------------------------------------- errors


def extrinsic_errors(state, rig):
    """Per-IMU estimation errors against a reference rig.

    Returns a dict with ``p_cm`` and ``q_deg`` for IMUs ``1..N``, ``q_g_deg``
    for ``0..N``, and the worst and mean value of each.
    """
    p_cm = 100.0 * np.linalg.norm(state.p - rig.positions(), axis=1)
    q_deg = geo.angle_between(state.q, rig.orientations())
    g_deg = geo.angle_between(state.q_g, rig.gyro_misalignments())
    out = {"p_cm": p_cm.tolist(), "q_deg": np.atleast_1d(q_deg).tolist(), "q_g_deg": np.atleast_1d(g_deg).tolist()}
    for key in ("p_cm", "q_deg", "q_g_deg"):
        out[f"max_{key}"] = float(np.max(out[key]))
        out[f"mean_{key}"] = float(np.mean(out[key]))
    return out


def _full_nuisance(data, state):
    """``(T, dim ψ)`` nuisance over the whole dataset.

    Estimated segments are copied; biases elsewhere are held from the nearest
    preceding estimate (the first estimate before any), α falls back to the
    numerical derivative of the base gyroscope.
    """
    T, d, nb = data.n_steps, state.psi_dim, 6 * (state.n + 1)
    alpha = state.alpha_init
    if alpha is None or len(alpha) != T:
        alpha = init_angular_acceleration(data.gyro[:, 0], data.dt, state.q_g[0])
    psi = np.zeros((T, d))
    psi[:, nb:] = alpha
    known = np.zeros(T, dtype=bool)
    K = next(iter(state.nuisance.values())).shape[0] if state.nuisance else 0
    for idx, block in state.nuisance.items():
        lo = idx * K
        if lo < 0 or lo + K > T:
            raise ConfigError(f"nuisance of segment {idx} lies outside the dataset")
        psi[lo:lo + K] = block
        known[lo:lo + K] = True
    if known.any():
        src = np.where(known, np.arange(T), -1)
        src = np.maximum.accumulate(src)
        src[src < 0] = np.argmax(known)
        psi[:, :nb] = psi[src, :nb]
    return psi


def reprojection_error(data, state, noise=None):
    """Mean and standard deviation of ``|r_a|`` and ``|r_g|`` over all IMUs and timesteps.

    Returns a dict ``{"accel": (mean, std), "gyro": (mean, std)}`` in m/s² and
    rad/s. Unselected timesteps use zero-order-hold biases.
    """
    full = sim.Segment(-1, 0, data.t, data.accel, data.gyro)
    st = state.copy()
    st.nuisance = {-1: _full_nuisance(data, state)}
    if noise is None:
        noise = dataclasses.replace(sim.EDGE_CASE_NOISE, dt=data.dt)
    w_a, w_g, _, _ = whitening_weights(noise)
    lin = linearize_segment(st, full, noise, jacobian=False)
    ea = np.linalg.norm(lin.ra / w_a, axis=-1)
    eg = np.linalg.norm(lin.rg / w_g, axis=-1)
    return {"accel": (float(ea.mean()), float(ea.std())), "gyro": (float(eg.mean()), float(eg.std()))}


# ---------------------------------------------------------------- sensitivity


def perturbation_directions(seed, n):
    """Seeded unit directions ``(n, 3)`` for positions and ``(n, 3)`` rotation axes."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(_SWEEP_STREAM,))))
    u = rng.standard_normal((2, n, 3))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    return u[0], u[1]


def perturb(state, dp, dq_deg, p_dirs, q_axes):
    """Move every non-base IMU by ``dp`` metres and rotate it by ``dq_deg``."""
    out = state.copy()
    out.p = state.p + dp * p_dirs
    out.q = geo.normalize(geo.quat_mul(state.q, geo.quat_exp(np.radians(dq_deg) * q_axes)))
    return out


def information_series(segments, state, noise):
    """Per-segment ``information_scalar`` at ``state``."""
    def one(seg):
        try:
            return info_mod.information_scalar(info_mod.segment_marginal(seg, state, noise))
        except SingularInformationError:
            return -np.inf
    return np.array(pmap(one, segments))


@dataclass
class SweepResult:
    rows: list  # (dp, dq, rho)
    reference: np.ndarray
    p_dirs: np.ndarray
    q_axes: np.ndarray
    seed: int
    series: dict = field(default_factory=dict)

    def rho(self, dp, dq):
        for a, b, r in self.rows:
            if a == dp and b == dq:
                return r
        raise KeyError((dp, dq))

    def to_dict(self):
        return {
            "seed": self.seed,
            "rows": [{"dp": a, "dq": b, "rho": r} for a, b, r in self.rows],
            "p_directions": self.p_dirs.tolist(),
            "q_axes": self.q_axes.tolist(),
        }


def _correlate(ref, other):
    keep = np.isfinite(ref) & np.isfinite(other)
    return spearman(ref[keep], other[keep])


def sensitivity_sweep(data, rig_ref, dp_grid, dq_grid, seed=0, K=100, noise=None, points=None):
    """Rank correlation of segment information under extrinsic perturbations.

    Parameters
    ----------
    data : MeasurementSet
    rig_ref : RigConfig
        Reference extrinsics; its noise model is used unless ``noise`` is given.
    dp_grid, dq_grid : sequences
        Position [m] and orientation [deg] deviations; the full product is
        evaluated unless ``points`` lists explicit ``(dp, dq)`` pairs.
    seed : int
        Seeds the perturbation directions, shared by all grid points.

    Segments whose information cannot be factored in either series are
    left out of the correlation.
    """
    if points is None:
        if not len(dp_grid) or not len(dq_grid):
            raise ConfigError("sensitivity grids must be nonempty")
        points = [(float(a), float(b)) for a in dp_grid for b in dq_grid]
    noise = noise or rig_ref.noise
    segments = data.segments(K)
    ref_state = CalibrationState.from_rig(rig_ref)
    ref_state.alpha_init = init_angular_acceleration(data.gyro[:, 0], data.dt, ref_state.q_g[0])
    p_dirs, q_axes = perturbation_directions(seed, ref_state.n)
    ref = information_series(segments, ref_state, noise)
    res = SweepResult([], ref, p_dirs, q_axes, seed)
    for dp, dq in points:
        if dp == 0.0 and dq == 0.0:
            series = ref
        else:
            series = information_series(segments, perturb(ref_state, dp, dq, p_dirs, q_axes), noise)
        res.series[(dp, dq)] = series
        res.rows.append((dp, dq, _correlate(ref, series)))
    return res


def write_sweep_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dp", "dq", "rho"])
        for dp, dq, rho in rows:
            w.writerow([repr(float(dp)), repr(float(dq)), repr(float(rho))])


# ---------------------------------------------------------------- benchmark


def bench_dataset(L, K=20, N=1, seed=0, dt=0.01, noisy=False):
    """Synthetic data with exactly ``L`` segments of ``K`` steps.

    Every segment oscillates about one axis, cycling x, y, z, so that any
    selected subset of three or more consecutive segments excites all axes.
    Data are noiseless by default: on short noisy segments the solver's
    iteration count varies widely from call to call, which would swamp the
    cost scaling the benchmark is meant to expose.
    """
    rng = np.random.default_rng(seed)
    noise = dataclasses.replace(sim.EDGE_CASE_NOISE, dt=dt)
    imus = [sim.ImuExtrinsics(np.zeros(3), geo.IDENTITY, geo.IDENTITY)]
    for _ in range(N):
        p = rng.uniform(-0.2, 0.2, 3)
        q = geo.quat_exp(rng.uniform(-np.pi / 4, np.pi / 4, 3))
        imus.append(sim.ImuExtrinsics(p, q, geo.quat_exp(np.radians(1.0) * rng.standard_normal(3))))
    rig = sim.RigConfig(imus, noise)
    span = K * dt
    spec = [sim.Oscillation(l * span, (l + 1) * span, "xyz"[l % 3], 0.5, 1.0 / span) for l in range(L)]
    traj = sim.sinusoidal_euler_trajectory(L * span, dt, spec, gravity=rig.gravity)
    return sim.simulate(traj, rig, seed=seed, noisy=noisy)


def bench_complexity(L_grid, policy, N=1, K=20, lam=0.0, seed=0, repeats=1):
    """Counters and per-phase wall time of a policy on synthetic data.

    Each ``L`` is timed ``repeats`` times and the fastest run is kept, the
    usual guard against scheduler noise on shared machines. Returns a list of
    dicts with keys ``L, evals, calibrate_calls, eval_ms, calib_ms, total_ms``.
    """
    from .selection import run_policy

    if policy not in ("greedy-original", "greedy-init"):
        raise ConfigError("benchmarks cover the two greedy policies")
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    rows = []
    for L in L_grid:
        data = bench_dataset(int(L), K, N, seed)
        noise = dataclasses.replace(sim.EDGE_CASE_NOISE, dt=data.dt)
        best = None
        for _ in range(repeats):
            t = time.perf_counter()
            rep = run_policy(policy, data, noise, K=K, lam=lam)
            total = time.perf_counter() - t
            if best is None or total < best[0]:
                best = (total, rep)
        total, rep = best
        rows.append({
            "L": int(L),
            "evals": rep.counters["segment_jacobian_evals"],
            "calibrate_calls": rep.counters["calibrate_calls"],
            "eval_ms": 1e3 * rep.timings["evaluate"],
            "calib_ms": 1e3 * rep.timings["calibrate"],
            "total_ms": 1e3 * total,
        })
    return rows


def bench_summary(rows):
    """Fitted log-log exponents of counters and wall time against ``L``."""
    L = [r["L"] for r in rows]
    out = {}
    if len(rows) >= 2:
        out["evals_exponent"], out["evals_r2"] = fit_power_law(L, [r["evals"] for r in rows])
        out["time_exponent"], out["time_r2"] = fit_power_law(L, [max(r["total_ms"], 1e-9) for r in rows])
    return out


def write_bench_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["L", "evals", "eval_ms", "calib_ms"])
        for r in rows:
            w.writerow([r["L"], r["evals"], f"{r['eval_ms']:.3f}", f"{r['calib_ms']:.3f}"])
