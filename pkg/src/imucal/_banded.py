"""Block-banded nuisance systems and Schur elimination.

The nuisance block of the normal matrix is block tridiagonal in a special
way: dense ``d x d`` blocks per timestep, coupled to the next timestep only
through a diagonal (bias random-walk terms). Its upper bandwidth is therefore
exactly ``d``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

from .errors import SingularInformationError


class BandedNuisance:
    """Symmetric matrix from per-timestep blocks and next-step couplings.

    Parameters
    ----------
    diag : (T, d, d) array
        Diagonal blocks.
    couple : (T-1, d) array
        ``D[t*d + c, (t+1)*d + c]`` entries.
    """

    def __init__(self, diag, couple):
        self.diag = diag
        self.couple = couple
        self.T, self.d, _ = diag.shape
        self.n = self.T * self.d

    def diagonal(self):
        return np.einsum("tii->ti", self.diag).reshape(-1)

    def matvec(self, X):
        """``D @ X`` for ``X`` of shape ``(n, m)``."""
        Xb = X.reshape(self.T, self.d, -1)
        out = self.diag @ Xb
        if self.T > 1:
            out[:-1] += self.couple[..., None] * Xb[1:]
            out[1:] += self.couple[..., None] * Xb[:-1]
        return out.reshape(self.n, -1)

    def upper_band(self, scale=None, shift=0.0):
        """LAPACK upper band storage of ``S D S + shift I``."""
        d, T = self.d, self.T
        diag, couple = self.diag, self.couple
        if scale is not None:
            s = scale.reshape(T, d)
            diag = diag * s[:, :, None] * s[:, None, :]
            couple = couple * s[:-1] * s[1:]
        ab = np.zeros((d + 1, self.n))
        for o in range(d):
            b = np.arange(o, d)
            ab[d - o].reshape(T, d)[:, o:] = diag[:, b - o, b]
        if T > 1:
            ab[0].reshape(T, d)[1:, :] = couple
        ab[d] += shift
        return ab


class ScaledFactor:
    """Cholesky of ``S D S + shift I`` with ``S = diag(scale)``; solves the scaled system."""

    def __init__(self, band, scale, shift):
        self.band = band
        self.scale = scale
        self.shift = shift
        try:
            self.cb = cholesky_banded(band.upper_band(scale, shift), lower=False)
        except LinAlgError as exc:
            raise SingularInformationError(f"nuisance information is singular beyond jitter: {exc}") from exc

    def solve_scaled(self, rhs):
        return cho_solve_banded((self.cb, False), rhs)


def jacobi_scale(diagonal):
    """``1/sqrt(diag)`` with structurally empty entries mapped to 1."""
    d = np.asarray(diagonal, dtype=float)
    out = np.ones_like(d)
    pos = d > 0
    out[pos] = 1.0 / np.sqrt(d[pos])
    return out


def schur_marginal(A, Bt, band, jitter=1e-11, refine=1):
    """``A - B D^{-1} B^T`` with ``B^T`` given as ``(n_psi, p)``.

    ``D`` is Jacobi-scaled to unit diagonal and shifted by ``jitter``; iterative
    refinement against the unshifted ``D`` then removes the
    shift's bias wherever ``D`` is well determined. Directions where ``D``
    vanishes exactly do not contribute, since ``B^T`` lies in the range of ``D``.
    """
    s = jacobi_scale(band.diagonal())
    fac = ScaledFactor(band, s, jitter)
    Bts = Bt * s[:, None]
    Y = fac.solve_scaled(Bts)
    for _ in range(refine):
        resid = Bts - s[:, None] * band.matvec(s[:, None] * Y)
        Y = Y + fac.solve_scaled(resid)
    S = A - Bts.T @ Y
    return 0.5 * (S + S.T)
