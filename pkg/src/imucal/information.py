"""Fisher information on the extrinsics after marginalizing the nuisance.

Per segment the whitened ``J^T J`` of its intra-segment residuals is split
into Θ and ψ blocks, and ψ is removed by a Schur complement. Segments have
disjoint ψ, so their Θ-marginal contributions add.

Log-determinants use a Cholesky factor of ``H + ε I`` with
``ε = 1e-9 trace(H)/dim``. The nuisance block is factored after Jacobi
scaling with a 1e-11 shift, and one round of iterative refinement removes
the shift. A strict observability check based on the eigenvalues of the
Jacobi-scaled matrix is available separately. It is not applied inside
utility evaluation, because at ``p = 0`` a common rotation of all
gyroscope frames leaves every residual cost unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import _banded
from .errors import SingularInformationError, UnobservableError
from .estimation import segment_normal_blocks
from .residuals import linearize_segment

THETA_JITTER = 1e-9
PSI_JITTER = 1e-11
OBSERVABILITY_TOL = 1e-10


def segment_fisher(segment, state, noise):
    """``(H_ΘΘ, H_Θψ, H_ψψ)`` of one segment's intra-segment residuals.

    ``H_ψψ`` is a :class:`imucal._banded.BandedNuisance`; ``H_Θψ`` has shape
    ``(dim Θ, K dim ψ)``.
    """
    if segment.index not in state.nuisance:
        state = state.copy().ensure_segments([segment])
    lin = linearize_segment(state, segment, noise)
    A, B, D, couple, _, _ = segment_normal_blocks(lin)
    K, P, d = B.shape
    H_tp = B.transpose(1, 0, 2).reshape(P, K * d)
    return A, H_tp, _banded.BandedNuisance(D, couple)


def marginalize_segment(H_tt, H_tp, H_pp):
    """Θ-marginal information ``H_ΘΘ - H_Θψ H_ψψ^{-1} H_ψΘ`` of one segment.

    ``H_pp`` may be dense or banded. Raises
    :class:`~imucal.errors.SingularInformationError` when ``H_ψψ`` cannot be
    factored even after jitter.
    """
    if not isinstance(H_pp, _banded.BandedNuisance):
        H_pp = np.asarray(H_pp, dtype=float)
        return _dense_schur(H_tt, H_tp, H_pp)
    return _banded.schur_marginal(H_tt, H_tp.T, H_pp, jitter=PSI_JITTER)


def _dense_schur(A, B, D):
    s = _banded.jacobi_scale(np.diag(D))
    Ds = D * s[:, None] * s[None, :]
    Bs = B * s[None, :]
    try:
        fac = cho_factor(Ds + PSI_JITTER * np.eye(len(s)))
    except LinAlgError as exc:
        raise SingularInformationError(f"nuisance information is singular beyond jitter: {exc}") from exc
    Y = cho_solve(fac, Bs.T)
    for _ in range(1):
        Y = Y + cho_solve(fac, Bs.T - Ds @ Y)
    S = A - Bs @ Y
    return 0.5 * (S + S.T)


def segment_marginal(segment, state, noise):
    """Shortcut for ``marginalize_segment(*segment_fisher(...))``."""
    return marginalize_segment(*segment_fisher(segment, state, noise))


@dataclass
class MarginalInfo:
    """Accumulated Θ-marginal information.

    ``point`` records where the Jacobians were evaluated (``"theta0"`` or
    ``"estimate"``); ``contributions`` caches per-segment matrices.
    """

    H: np.ndarray
    point: str = "estimate"
    contributions: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, dim, point="estimate"):
        return cls(np.zeros((dim, dim)), point)

    def add(self, index, H_seg):
        # a segment contributes once; re-adding replaces its previous term
        if index in self.contributions:
            self.H = self.H - self.contributions[index]
        self.contributions[index] = H_seg
        self.H = self.H + H_seg
        return self

    def plus(self, index, H_seg):
        out = MarginalInfo(self.H.copy(), self.point, dict(self.contributions))
        return out.add(index, H_seg)

    @property
    def segments(self):
        return sorted(self.contributions)


def _matrix(info):
    return info.H if isinstance(info, MarginalInfo) else np.asarray(info, dtype=float)


def null_space(H, tol=OBSERVABILITY_TOL):
    """Directions with Jacobi-scaled eigenvalue below ``tol``, as columns in Θ coordinates."""
    H = 0.5 * (H + H.T)
    # structurally empty parameters count as unobservable
    empty = np.diag(H) <= 0
    live = np.flatnonzero(~empty)
    s = _banded.jacobi_scale(np.diag(H)[live])
    Hs = H[np.ix_(live, live)] * s[:, None] * s[None, :]
    evals, evecs = np.linalg.eigh(Hs)
    weak = evals < tol
    basis = np.zeros((len(H), int(weak.sum())))
    basis[live] = evecs[:, weak] * s[:, None]
    if empty.any():
        basis = np.concatenate([basis, np.eye(len(H))[:, empty]], axis=1)
    if basis.shape[1]:
        basis, _ = np.linalg.qr(basis)
    return basis


def log_det_information(H):
    """``log|H + ε I|`` with trace-relative ``ε``; raises on factorization failure."""
    H = 0.5 * (H + H.T)
    dim = len(H)
    eps = THETA_JITTER * np.trace(H) / dim
    if not eps > 0:
        raise UnobservableError("information matrix is zero", np.eye(dim))
    try:
        c, _ = cho_factor(H + eps * np.eye(dim), lower=True)
    except LinAlgError as exc:
        raise UnobservableError(f"information is not positive definite after jitter: {exc}", null_space(H)) from exc
    return 2.0 * float(np.sum(np.log(np.diag(c)))), c


def marginal_covariance(info, require_observable=True):
    """``Σ_Θ`` and ``log|Σ_Θ|`` from accumulated information.

    Parameters
    ----------
    info : MarginalInfo or (p, p) array
    require_observable : bool
        When true, any Jacobi-scaled eigenvalue below 1e-10 raises
        :class:`~imucal.errors.UnobservableError` carrying the null basis.
        When false only a Cholesky failure after jitter raises.
    """
    H = _matrix(info)
    if require_observable:
        basis = null_space(H)
        if basis.shape[1]:
            raise UnobservableError(f"{basis.shape[1]} calibration direction(s) are unobservable", basis)
    logdet_h, c = log_det_information(H)
    inv_c = np.linalg.solve(np.tril(c), np.eye(len(H)))
    sigma = inv_c.T @ inv_c
    return 0.5 * (sigma + sigma.T), -logdet_h


def utility(logdet_prior, logdet_post):
    """Information gain ``0.5 (log|Σ_prior| - log|Σ_post|)`` in nats."""
    if np.isinf(logdet_prior) and np.isinf(logdet_post):
        return 0.0 if logdet_prior == logdet_post else np.inf * np.sign(logdet_prior - logdet_post)
    return 0.5 * (logdet_prior - logdet_post)


def information_scalar(info):
    """``-0.5 log|Σ_Θ|``; ``-inf`` when the information cannot be factored."""
    try:
        _, logdet = marginal_covariance(info, require_observable=False)
    except UnobservableError:
        return -np.inf
    return -0.5 * logdet


def segments_information(segments, state, noise):
    """Accumulated information of ``segments`` at ``state``."""
    info = MarginalInfo.empty(state.theta_dim)
    for seg in segments:
        info.add(seg.index, segment_marginal(seg, state, noise))
    return info
