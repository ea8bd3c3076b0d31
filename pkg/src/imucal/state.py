"""Calibration state: extrinsics Θ plus per-timestep nuisance ψ.

Θ layout (local tangent coordinates, frozen)::

    [p_1 .. p_N | φ_q1 .. φ_qN | φ_g0 .. φ_gN]      size 6N + 3(N+1)

ψ layout for one timestep (frozen)::

    [b_a0 .. b_aN | b_g0 .. b_gN | α]                size 6(N+1) + 3

Rotations are updated by right perturbation ``q <- q ⊗ Exp(δφ)``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import ConfigError


def theta_dim(n):
    """Size of Θ for ``n`` non-base IMUs."""
    return 6 * n + 3 * (n + 1)


def psi_dim(n):
    """Size of ψ per timestep for ``n`` non-base IMUs."""
    return 6 * (n + 1) + 3


class ThetaLayout:
    """Column offsets inside Θ."""

    def __init__(self, n):
        self.n = n
        self.dim = theta_dim(n)

    def p(self, n):
        return 3 * (n - 1)

    def q(self, n):
        return 3 * self.n + 3 * (n - 1)

    def g(self, n):
        return 6 * self.n + 3 * n


class PsiLayout:
    """Column offsets inside one timestep of ψ."""

    def __init__(self, n):
        self.n = n
        self.dim = psi_dim(n)

    def ba(self, n):
        return 3 * n

    def bg(self, n):
        return 3 * (self.n + 1) + 3 * n

    @property
    def alpha(self):
        return 6 * (self.n + 1)


@dataclass
class CalibrationState:
    """Point estimate of all unknowns.

    Attributes
    ----------
    p : (N, 3) array
        Base-IMU position in each IMU frame [m].
    q : (N, 4) array
        ``q_In`` quaternions.
    q_g : (N+1, 4) array
        Gyroscope misalignments, base included.
    nuisance : dict
        Segment index -> ``(K, psi_dim)`` array of biases and base angular
        acceleration for the timesteps of that segment.
    alpha_init : (T, 3) array or None
        Angular-acceleration guess for every timestep of the dataset, used to
        seed the nuisance of segments entering the problem.
    """

    p: np.ndarray
    q: np.ndarray
    q_g: np.ndarray
    nuisance: dict = field(default_factory=dict)
    alpha_init: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.p = np.array(self.p, dtype=float).reshape(-1, 3)
        self.q = geo.normalize(np.array(self.q, dtype=float).reshape(-1, 4))
        self.q_g = geo.normalize(np.array(self.q_g, dtype=float).reshape(-1, 4))
        if len(self.q) != len(self.p) or len(self.q_g) != len(self.p) + 1:
            raise ConfigError("inconsistent IMU counts in calibration state")

    @property
    def n(self):
        """Number of non-base IMUs."""
        return len(self.p)

    @property
    def theta_dim(self):
        return theta_dim(self.n)

    @property
    def psi_dim(self):
        return psi_dim(self.n)

    @classmethod
    def identity(cls, n, alpha_init=None):
        eye = np.tile(geo.IDENTITY, (n, 1))
        return cls(np.zeros((n, 3)), eye, np.tile(geo.IDENTITY, (n + 1, 1)), alpha_init=alpha_init)

    @classmethod
    def from_rig(cls, rig, alpha_init=None):
        return cls(rig.positions(), rig.orientations(), rig.gyro_misalignments(), alpha_init=alpha_init)

    def copy(self):
        out = copy.copy(self)
        out.p = self.p.copy()
        out.q = self.q.copy()
        out.q_g = self.q_g.copy()
        out.nuisance = {k: v.copy() for k, v in self.nuisance.items()}
        out.warnings = list(self.warnings)
        return out

    def extrinsics_only(self):
        """Copy without nuisance, keeping the α guess."""
        out = self.copy()
        out.nuisance = {}
        return out

    # ---- nuisance views

    def bias_a(self, seg):
        return self.nuisance[seg][:, : 3 * (self.n + 1)].reshape(-1, self.n + 1, 3)

    def bias_g(self, seg):
        return self.nuisance[seg][:, 3 * (self.n + 1): 6 * (self.n + 1)].reshape(-1, self.n + 1, 3)

    def alpha(self, seg):
        return self.nuisance[seg][:, 6 * (self.n + 1):]

    def ensure_segments(self, segments):
        """Add zero-bias nuisance seeded with ``alpha_init`` for unseen segments."""
        for seg in segments:
            if seg.index in self.nuisance:
                if self.nuisance[seg.index].shape != (seg.K, self.psi_dim):
                    raise ConfigError(f"nuisance for segment {seg.index} has the wrong shape")
                continue
            psi = np.zeros((seg.K, self.psi_dim))
            if self.alpha_init is not None:
                psi[:, 6 * (self.n + 1):] = self.alpha_init[seg.start:seg.start + seg.K]
            self.nuisance[seg.index] = psi
        return self

    # ---- updates

    def retract(self, d_theta, d_psi=None):
        """New state moved by ``d_theta`` and per-segment ``d_psi`` ({seg: (K, d)})."""
        lay = ThetaLayout(self.n)
        out = self.copy()
        d_theta = np.asarray(d_theta, dtype=float)
        n = self.n
        out.p = self.p + d_theta[: 3 * n].reshape(n, 3)
        out.q = geo.quat_mul(self.q, geo.quat_exp(d_theta[lay.q(1): lay.q(1) + 3 * n].reshape(n, 3)))
        out.q_g = geo.quat_mul(self.q_g, geo.quat_exp(d_theta[lay.g(0):].reshape(n + 1, 3)))
        # keep storage exactly unit-norm
        out.q = geo.normalize(out.q)
        out.q_g = geo.normalize(out.q_g)
        if d_psi:
            for seg, delta in d_psi.items():
                out.nuisance[seg] = self.nuisance[seg] + delta
        return out

    def rotations(self):
        """``(R_1..R_N, G_0..G_N)`` rotation-matrix stacks."""
        return geo.quat_to_rot(self.q), geo.quat_to_rot(self.q_g)

    def to_dict(self):
        return {
            "p_m": self.p.tolist(),
            "p_cm": (100.0 * self.p).tolist(),
            "q_xyzw": self.q.tolist(),
            "q_euler_xyz_deg": geo.quat_to_euler_xyz(self.q).tolist(),
            "q_g_xyzw": self.q_g.tolist(),
            "q_g_euler_xyz_deg": geo.quat_to_euler_xyz(self.q_g).tolist(),
        }
