"""Instrument-space projections and symmetric-definite pencil eigenvalues.

P_Z and M_Z are never formed: every application goes through a thin QR basis
of Z, so memory stays O(nk).
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from app.exceptions import NumericalDegeneracyError, RankDeficientError, SingularGramError
from app.model.model import RANK_TOLERANCE, IVDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProjectionBasis:
    """Orthonormal basis Q_Z (n x k) of the column space of Z."""

    Q: np.ndarray

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def k(self) -> int:
        return self.Q.shape[1]

    def coordinates(self, v: np.ndarray) -> np.ndarray:
        """Q_Zᵀ v, the coordinates of P_Z v in the basis."""
        return self.Q.T @ v

    def project(self, v: np.ndarray) -> np.ndarray:
        """P_Z v."""
        return self.Q @ (self.Q.T @ v)

    def annihilate(self, v: np.ndarray) -> np.ndarray:
        """M_Z v = v − P_Z v."""
        return v - self.project(v)

    def gram_pair(self, W: np.ndarray):
        """Return (Wᵀ P_Z W, Wᵀ M_Z W) for a tall matrix W."""
        W = np.atleast_2d(W.T).T
        coords = self.coordinates(W)
        residual = W - self.Q @ coords
        projected = coords.T @ coords
        annihilated = residual.T @ residual
        return _symmetrize(projected), _symmetrize(annihilated)


def projection_basis(ds: IVDataset) -> ProjectionBasis:
    """Thin QR factorization of Z; raises RankDeficientError if Z is not of full column rank."""
    Q, R = scipy.linalg.qr(ds.Z, mode="economic")
    singular_values = scipy.linalg.svdvals(R)
    if singular_values[0] == 0.0 or singular_values[-1] / singular_values[0] < RANK_TOLERANCE:
        raise RankDeficientError("instrument matrix rank-deficient")
    Q.setflags(write=False)
    return ProjectionBasis(Q=Q)


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def pencil_eigh(a: np.ndarray, b: np.ndarray, what: str = "M_Z Gram matrix"):
    """Eigen-decomposition of the symmetric-definite pencil (a, b).

    b = LLᵀ is whitened away, leaving the symmetric problem L⁻¹ a L⁻ᵀ u = μ u;
    generalized eigenvectors are v = L⁻ᵀ u. Eigenvalues are ascending.
    """
    try:
        lower = scipy.linalg.cholesky(b, lower=True)
    except np.linalg.LinAlgError as e:
        logger.error(f"Cholesky factorization of the {what} failed: {str(e)}")
        raise SingularGramError(f"singular {what}") from e

    half = scipy.linalg.solve_triangular(lower, a, lower=True)
    whitened = scipy.linalg.solve_triangular(lower, half.T, lower=True)
    values, vectors = scipy.linalg.eigh(_symmetrize(whitened))
    return values, scipy.linalg.solve_triangular(lower.T, vectors, lower=False)


def clamp_nonnegative(values: np.ndarray, scale: float, what: str) -> np.ndarray:
    """Clamp round-off negatives to zero; values below −1e-8·scale signal inconsistency."""
    values = np.asarray(values, dtype=float)
    floor = -1e-8 * max(1.0, scale)
    if np.any(values < floor):
        raise NumericalDegeneracyError(f"{what} is negative beyond round-off: {values.min():.3e}")
    return np.where(values < 0.0, 0.0, values)
