"""Rigid-body multi-IMU simulation and measurement file I/O.

Frames: ``W`` world, ``I0`` base IMU, ``In`` IMU ``n`` (accelerometer
aligned), ``gn`` its gyroscope. Per IMU the extrinsics are

* ``p``   -- position of ``I0`` relative to ``In``, expressed in ``In`` [m]
* ``q``   -- ``q_In``, rotates ``I0`` coordinates into ``In``
* ``q_g`` -- ``q_gn``, rotates ``gn`` coordinates into ``In``

Forward models (noise ``n``, random-walk bias ``b``)::

    gyro_n  = C(q_g)^T C(q) w + b_g + n_g
    accel_n = C(q) f0 - [C(q) w]x^2 p - [C(q) alpha]x p + b_a + n_a

where ``w``, ``alpha`` and ``f0`` are the base IMU angular rate, angular
acceleration and specific force.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import ConfigError, CsvFormatError, StructuralError

DEFAULT_GRAVITY = (0.0, 0.0, -9.81)
CSV_HEADER = ["t", "imu_id", "ax", "ay", "az", "gx", "gy", "gz"]

_AXES = {"x": 0, "y": 1, "z": 2, 0: 0, 1: 1, 2: 2}
_ACCEL, _GYRO = 0, 1
_WHITE, _WALK = 0, 1


@dataclass(frozen=True)
class NoiseSpec:
    """Continuous-time IMU noise parameters.

    ``sigma_a``/``sigma_g`` are white-noise densities, ``sigma_ba``/``sigma_bg``
    bias random-walk intensities, ``dt`` the sampling interval.
    ``sigma_alpha`` is the angular-acceleration uncertainty used in the
    accelerometer residual covariance; left as ``None`` it defaults to
    ``sqrt(2) * sigma_g / dt``.
    """

    sigma_a: float
    sigma_ba: float
    sigma_g: float
    sigma_bg: float
    dt: float
    sigma_alpha: float | None = None

    def __post_init__(self):
        for name in ("sigma_a", "sigma_ba", "sigma_g", "sigma_bg"):
            if not getattr(self, name) >= 0.0:
                raise ConfigError(f"{name} must be nonnegative")
        if not self.dt > 0.0:
            raise ConfigError("dt must be positive")
        if self.sigma_alpha is not None and not self.sigma_alpha >= 0.0:
            raise ConfigError("sigma_alpha must be nonnegative")

    @property
    def alpha_sigma(self):
        if self.sigma_alpha is not None:
            return self.sigma_alpha
        return np.sqrt(2.0) * self.sigma_g / self.dt

    def to_dict(self):
        out = {k: getattr(self, k) for k in ("sigma_a", "sigma_ba", "sigma_g", "sigma_bg", "dt")}
        if self.sigma_alpha is not None:
            out["sigma_alpha"] = self.sigma_alpha
        return out

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                sigma_a=float(d["sigma_a"]),
                sigma_ba=float(d["sigma_ba"]),
                sigma_g=float(d["sigma_g"]),
                sigma_bg=float(d["sigma_bg"]),
                dt=float(d["dt"]),
                sigma_alpha=None if d.get("sigma_alpha") is None else float(d["sigma_alpha"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid noise spec: {exc}") from exc


# Simulation noise of the four-IMU edge-case study, sampled at 100 Hz.
EDGE_CASE_NOISE = NoiseSpec(sigma_a=2e-3, sigma_ba=3e-3, sigma_g=1.6968e-4, sigma_bg=1.9393e-5, dt=0.01)


@dataclass(frozen=True)
class ImuExtrinsics:
    p: np.ndarray
    q: np.ndarray
    q_g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        for name in ("q", "q_g"):
            q = np.asarray(getattr(self, name), dtype=float).reshape(4)
            if abs(np.linalg.norm(q) - 1.0) > 1e-9:
                raise ConfigError(f"{name} is not a unit quaternion")
            object.__setattr__(self, name, geo.normalize(q))


@dataclass(frozen=True)
class RigConfig:
    """IMU extrinsics (index 0 is the base), noise model and world gravity."""

    imus: tuple
    noise: NoiseSpec
    gravity: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_GRAVITY))

    def __post_init__(self):
        object.__setattr__(self, "imus", tuple(self.imus))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))
        if len(self.imus) < 2:
            raise ConfigError("a rig needs at least two IMUs")
        base = self.imus[0]
        if np.any(base.p != 0.0) or geo.rotation_angle(base.q) > 1e-12:
            raise ConfigError("IMU 0 must have zero position and identity orientation")

    @property
    def n_imus(self):
        return len(self.imus)

    def positions(self):
        return np.array([imu.p for imu in self.imus[1:]])

    def orientations(self):
        return np.array([imu.q for imu in self.imus[1:]])

    def gyro_misalignments(self):
        return np.array([imu.q_g for imu in self.imus])

    def with_gyro_misalignment(self, q_g):
        imus = [ImuExtrinsics(imu.p, imu.q, qg) for imu, qg in zip(self.imus, q_g)]
        return RigConfig(imus, self.noise, self.gravity)

    def to_dict(self):
        return {
            "imus": [
                {"p": imu.p.tolist(), "q_xyzw": imu.q.tolist(), "q_g_xyzw": imu.q_g.tolist()}
                for imu in self.imus
            ],
            "noise": self.noise.to_dict(),
            "gravity": self.gravity.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            imus = [
                ImuExtrinsics(
                    np.asarray(i["p"], dtype=float),
                    np.asarray(i.get("q_xyzw", geo.IDENTITY), dtype=float),
                    np.asarray(i.get("q_g_xyzw", geo.IDENTITY), dtype=float),
                )
                for i in d["imus"]
            ]
            noise = NoiseSpec.from_dict(d["noise"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid rig config: {exc}") from exc
        return cls(imus, noise, d.get("gravity", DEFAULT_GRAVITY))


def load_rig(path):
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return RigConfig.from_dict(d)


def save_rig(rig, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(rig.to_dict(), fh, indent=2)
        fh.write("\n")


def edge_case_rig(noise=EDGE_CASE_NOISE, q_g=None):
    """Four IMUs offset 20 cm along each base axis, each flipped by a half-turn."""
    poses = [
        ([0.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
        ([0.20, 0.0, 0.0], [180.0, 0.0, 0.0]),
        ([0.0, 0.20, 0.0], [0.0, 180.0, 0.0]),
        ([0.0, 0.0, 0.20], [0.0, 0.0, 180.0]),
    ]
    if q_g is None:
        q_g = [geo.IDENTITY] * len(poses)
    imus = []
    for (p, euler), qg in zip(poses, q_g):
        q = geo.IDENTITY if not any(euler) else geo.euler_xyz_to_quat(euler)
        imus.append(ImuExtrinsics(np.array(p), q, qg))
    return RigConfig(imus, noise)


def random_gyro_misalignment(seed, stddev_deg, n_imus):
    """Rotations about uniformly random axes by N(0, stddev^2) angles.

    Returns ``(n_imus, 4)`` quaternions.
    """
    if stddev_deg < 0:
        raise ConfigError("stddev must be nonnegative")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(7919,))))
    axes = rng.standard_normal((n_imus, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = np.radians(stddev_deg) * rng.standard_normal(n_imus)
    return geo.quat_exp(axes * angles[:, None])


# ---------------------------------------------------------------- trajectories


@dataclass(frozen=True)
class Oscillation:
    """``angle(t) = amplitude * sin(2 pi frequency t)`` about one Euler axis on [start, end)."""

    start: float
    end: float
    axis: object
    amplitude: float
    frequency: float

    def __post_init__(self):
        if self.axis not in _AXES:
            raise ConfigError(f"unknown axis {self.axis!r}")
        if not self.end > self.start:
            raise ConfigError("oscillation interval must have end > start")


@dataclass(frozen=True)
class Translation:
    """World-frame position sinusoid ``amplitude * sin(2 pi frequency t)`` along one axis."""

    axis: object
    amplitude: float
    frequency: float


EDGE_CASE_PROFILE = (
    Oscillation(0.0, 20.0, "x", 1.0, 0.5),
    Oscillation(20.0, 40.0, "y", 1.0, 1.0),
    Oscillation(40.0, 60.0, "z", 1.0, 1.5),
)
EDGE_CASE_DURATION = 60.0


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled base-IMU motion.

    ``q_wi`` is the base orientation in the world, ``omega``/``alpha`` the base
    angular rate/acceleration in the base frame, ``f0`` the base specific force.
    """

    t: np.ndarray
    q_wi: np.ndarray
    omega: np.ndarray
    alpha: np.ndarray
    f0: np.ndarray

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    def __len__(self):
        return len(self.t)


def _check_overlaps(spec):
    ivals = sorted((o.start, o.end) for o in spec)
    for (_, e0), (s1, _) in zip(ivals, ivals[1:]):
        if s1 < e0:
            raise ConfigError("oscillation intervals overlap")


def euler_body_rates(e, de, dde):
    """Body angular velocity and acceleration of an XYZ-Euler profile.

    ``e``, ``de``, ``dde`` are ``(T, 3)`` angles [rad] and their first and
    second time derivatives. Returns ``(omega, alpha)`` in the body frame.
    """
    ex, ey, ez = np.eye(3)
    rxt = np.swapaxes(geo.rot_x(e[:, 0]), 1, 2)
    ryt = np.swapaxes(geo.rot_y(e[:, 1]), 1, 2)
    rxryt = rxt @ ryt

    u_y = rxt @ ey
    u_z = rxryt @ ez
    omega = de[:, :1] * ex + de[:, 1:2] * u_y + de[:, 2:] * u_z
    # time derivatives of the Euler-rate axes
    du_y = -de[:, :1] * np.cross(ex, u_y)
    du_z = -de[:, :1] * np.cross(ex, u_z) - de[:, 1:2] * (rxt @ np.cross(ey, ryt @ ez)[..., None])[..., 0]
    alpha = dde[:, :1] * ex + dde[:, 1:2] * u_y + dde[:, 2:] * u_z + de[:, 1:2] * du_y + de[:, 2:] * du_z

    return omega, alpha


def sinusoidal_euler_trajectory(duration, dt, spec, translation=(), gravity=DEFAULT_GRAVITY):
    """Piecewise sinusoidal XYZ-Euler orientation profile with analytic rates.

    Orientation is ``Rz(yaw) Ry(pitch) Rx(roll)``; angles outside every
    interval are zero. Angular velocity and acceleration come from exact
    differentiation of the profile. Position is fixed at the origin unless
    ``translation`` sinusoids are given.
    """
    if not duration > 0 or not dt > 0:
        raise ConfigError("duration and dt must be positive")
    _check_overlaps(spec)
    n = int(round(duration / dt))
    t = np.arange(n) * dt

    e = np.zeros((n, 3))
    de = np.zeros((n, 3))
    dde = np.zeros((n, 3))
    for osc in spec:
        ax = _AXES[osc.axis]
        on = (t >= osc.start) & (t < osc.end)
        w = 2.0 * np.pi * osc.frequency
        e[on, ax] += osc.amplitude * np.sin(w * t[on])
        de[on, ax] += osc.amplitude * w * np.cos(w * t[on])
        dde[on, ax] -= osc.amplitude * w * w * np.sin(w * t[on])

    omega, alpha = euler_body_rates(e, de, dde)

    q_wi = geo.euler_xyz_to_quat(np.degrees(e))
    r_wi = geo.quat_to_rot(q_wi)

    acc_w = np.zeros((n, 3))
    for tr in translation:
        w = 2.0 * np.pi * tr.frequency
        acc_w[:, _AXES[tr.axis]] -= tr.amplitude * w * w * np.sin(w * t)
    g = np.asarray(gravity, dtype=float)
    f0 = np.einsum("kji,kj->ki", r_wi, acc_w - g)
    return Trajectory(t, q_wi, omega, alpha, f0)


def edge_case_trajectory(dt=0.01, duration=EDGE_CASE_DURATION, gravity=DEFAULT_GRAVITY):
    """Roll, then pitch, then yaw oscillation, 20 s each."""
    return sinusoidal_euler_trajectory(duration, dt, EDGE_CASE_PROFILE, gravity=gravity)


# ---------------------------------------------------------------- measurements


@dataclass(frozen=True)
class GroundTruth:
    trajectory: Trajectory
    rig: RigConfig
    bias_a: np.ndarray  # (T, N+1, 3)
    bias_g: np.ndarray  # (T, N+1, 3)


@dataclass(frozen=True)
class Segment:
    """``K`` consecutive timesteps of all IMUs; ``start`` is the first global timestep."""

    index: int
    start: int
    t: np.ndarray
    accel: np.ndarray  # (K, N+1, 3)
    gyro: np.ndarray  # (K, N+1, 3)

    @property
    def K(self):
        return len(self.t)

    @property
    def n_imus(self):
        return self.accel.shape[1]


@dataclass
class MeasurementSet:
    """Dense grid of accelerometer/gyroscope samples, ``(T, N+1, 3)`` each."""

    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    ground_truth: GroundTruth | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.accel = np.asarray(self.accel, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float)
        T = len(self.t)
        if self.accel.shape != self.gyro.shape or self.accel.ndim != 3 or self.accel.shape[0] != T:
            raise StructuralError("accel/gyro arrays must both be (T, n_imus, 3)")
        if T > 1 and np.any(np.diff(self.t) <= 0):
            raise StructuralError("timestamps must be strictly increasing")

    @property
    def n_imus(self):
        return self.accel.shape[1]

    @property
    def n_steps(self):
        return len(self.t)

    @property
    def dt(self):
        return float(np.median(np.diff(self.t)))

    def segments(self, K):
        """Split into ``len // K`` full segments; the trailing remainder is dropped."""
        if K < 2:
            raise ConfigError("segments need at least two timesteps")
        L = self.n_steps // K
        return [
            Segment(l, l * K, self.t[l * K:(l + 1) * K], self.accel[l * K:(l + 1) * K], self.gyro[l * K:(l + 1) * K])
            for l in range(L)
        ]

    def dropped_steps(self, K):
        return self.n_steps % K


def simulate(traj, rig, seed=0, noisy=True):
    """Generate measurements for every IMU of ``rig`` along ``traj``.

    Each (imu, sensor, signal) pair draws from its own counter-based stream,
    so adding IMUs leaves existing streams untouched. Biases start at zero.
    With ``noisy=False`` both white noise and bias walks are zero.
    """
    n_steps = len(traj)
    dt = traj.dt
    noise = rig.noise
    accel = np.empty((n_steps, rig.n_imus, 3))
    gyro = np.empty((n_steps, rig.n_imus, 3))
    bias_a = np.zeros((n_steps, rig.n_imus, 3))
    bias_g = np.zeros((n_steps, rig.n_imus, 3))

    def stream(n, sensor, signal):
        ss = np.random.SeedSequence(seed, spawn_key=(n, sensor, signal))
        return np.random.Generator(np.random.Philox(ss))

    for n, imu in enumerate(rig.imus):
        R = geo.quat_to_rot(imu.q)
        G = geo.quat_to_rot(imu.q_g)
        w_n = traj.omega @ R.T
        a_n = traj.alpha @ R.T
        p = imu.p
        specific = traj.f0 @ R.T - np.cross(w_n, np.cross(w_n, p)) - np.cross(a_n, p)
        rate = w_n @ G
        if noisy:
            for sensor, sig, sig_b, bias in ((_ACCEL, noise.sigma_a, noise.sigma_ba, bias_a),
                                             (_GYRO, noise.sigma_g, noise.sigma_bg, bias_g)):
                steps = sig_b * np.sqrt(dt) * stream(n, sensor, _WALK).standard_normal((n_steps - 1, 3))
                bias[1:, n] = np.cumsum(steps, axis=0)
            n_a = noise.sigma_a / np.sqrt(dt) * stream(n, _ACCEL, _WHITE).standard_normal((n_steps, 3))
            n_g = noise.sigma_g / np.sqrt(dt) * stream(n, _GYRO, _WHITE).standard_normal((n_steps, 3))
        else:
            n_a = n_g = 0.0
        accel[:, n] = specific + bias_a[:, n] + n_a
        gyro[:, n] = rate + bias_g[:, n] + n_g

    truth = GroundTruth(traj, rig, bias_a, bias_g)
    return MeasurementSet(traj.t.copy(), accel, gyro, truth)


def simulate_edge_case(seed=0, noisy=True, misalignment_deg=1.0, noise=EDGE_CASE_NOISE):
    """Edge-case rig and trajectory with seeded gyroscope misalignment."""
    q_g = random_gyro_misalignment(seed, misalignment_deg, 4)
    rig = edge_case_rig(noise, q_g)
    traj = edge_case_trajectory(noise.dt, gravity=rig.gravity)
    return simulate(traj, rig, seed=seed, noisy=noisy)


# ---------------------------------------------------------------- CSV


def save_csv(data, path):
    """Write one row per (timestep, imu), timestep-major, 17 significant digits."""
    T, n_imus, _ = data.accel.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for k in range(T):
            tk = f"{data.t[k]:.17g}"
            for n in range(n_imus):
                a = data.accel[k, n]
                g = data.gyro[k, n]
                fh.write(
                    f"{tk},{n},{a[0]:.17g},{a[1]:.17g},{a[2]:.17g},{g[0]:.17g},{g[1]:.17g},{g[2]:.17g}\n"
                )


def load_csv(path):
    """Read a measurement CSV written by :func:`save_csv` (or any tool using its schema)."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file", line=1) from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise CsvFormatError(f"header must be {','.join(CSV_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise CsvFormatError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", line=lineno)
            try:
                imu = int(row[1])
                vals = [float(v) for v in (row[0], *row[2:])]
            except ValueError as exc:
                raise CsvFormatError(str(exc), line=lineno) from None
            if imu < 0:
                raise CsvFormatError("imu_id must be nonnegative", line=lineno)
            if not np.all(np.isfinite(vals)):
                raise CsvFormatError("non-finite value", line=lineno)
            rows.append((vals[0], imu, vals[1:]))

    if not rows:
        raise StructuralError(f"{path}: no measurement rows")
    n_imus = max(r[1] for r in rows) + 1
    times = sorted({r[0] for r in rows})
    index = {t: i for i, t in enumerate(times)}
    accel = np.full((len(times), n_imus, 3), np.nan)
    gyro = np.full((len(times), n_imus, 3), np.nan)
    seen = np.zeros((len(times), n_imus), dtype=bool)
    for t, imu, v in rows:
        k = index[t]
        if seen[k, imu]:
            raise StructuralError(f"duplicate row for t={t!r}, imu {imu}")
        seen[k, imu] = True
        accel[k, imu] = v[:3]
        gyro[k, imu] = v[3:]
    if not seen.all():
        k, n = np.argwhere(~seen)[0]
        raise StructuralError(f"missing row for t={times[k]!r}, imu {n}")
    return MeasurementSet(np.array(times), accel, gyro)


def save_truth(truth, path, extra=None):
    """Ground-truth sidecar: rig extrinsics plus run metadata."""
    doc = {"rig": truth.rig.to_dict()}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def truth_path(csv_path):
    p = Path(csv_path)
    return p.with_name(p.stem + ".truth.json")
