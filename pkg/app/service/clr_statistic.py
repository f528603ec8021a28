"""Likelihood-ratio statistic, conditioning eigenvalues and the full CLR test.

For a hypothesized β₀ with residual r = y − Xβ₀:

    AR(β₀) = (n−k)·rᵀP_Z r / rᵀM_Z r
    LR(β₀) = AR(β₀) − min_b AR(b)

and the conditioning eigenvalues are those of (n−k)[X̃ᵀM_Z X̃]⁻¹X̃ᵀP_Z X̃ with
X̃ = X − r·(rᵀM_Z X)/(rᵀM_Z r).
"""
import logging
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy import stats

from app.config.config import get_settings
from app.exceptions import (
    DegenerateResidualError,
    DimensionError,
    InsufficientDrawsError,
    NumericalDegeneracyError,
    SingularGramError,
)
from app.model.model import EigenSpectrum, IVDataset, TestResult, validate_dataset
from app.service.conditional_distribution import (
    MIN_PVALUE_DRAWS,
    check_level,
    conditional_samples,
    mc_pvalue,
    mc_quantile,
)
from app.service.projection import ProjectionBasis, clamp_nonnegative, pencil_eigh, projection_basis

logger = logging.getLogger(__name__)

# ‖M_Z r‖ at or below this fraction of ‖r‖ counts as a zero residual.
RESIDUAL_TOLERANCE = 1e-12


def _as_beta(ds: IVDataset, beta0: Sequence[float]) -> np.ndarray:
    beta = np.asarray(beta0, dtype=float).reshape(-1)
    if beta.shape[0] != ds.m:
        raise DimensionError(f"beta0 has length {beta.shape[0]}, expected m={ds.m}")
    if not np.all(np.isfinite(beta)):
        raise DimensionError("beta0 must be finite")
    return beta


def _basis(ds: IVDataset, basis: Optional[ProjectionBasis]) -> ProjectionBasis:
    return basis if basis is not None else projection_basis(ds)


def _annihilated_residual(ds: IVDataset, beta: np.ndarray, basis: ProjectionBasis):
    residual = ds.y - ds.X @ beta
    annihilated = basis.annihilate(residual)
    norm = np.linalg.norm(annihilated)
    if norm <= RESIDUAL_TOLERANCE * np.linalg.norm(residual) or norm == 0.0:
        raise DegenerateResidualError("residual y − Xβ₀ lies in the instrument space (M_Z residual ≈ 0)")
    return residual, annihilated


def tilde_x(ds: IVDataset, beta0: Sequence[float], basis: Optional[ProjectionBasis] = None) -> np.ndarray:
    """X̃(β₀): X orthogonalized against the residual in the M_Z inner product."""
    basis = _basis(ds, basis)
    residual, annihilated = _annihilated_residual(ds, _as_beta(ds, beta0), basis)
    correction = (annihilated @ ds.X) / (annihilated @ annihilated)
    return ds.X - np.outer(residual, correction)


def anderson_rubin(ds: IVDataset, beta0: Sequence[float], basis: Optional[ProjectionBasis] = None) -> float:
    """AR(β₀) = (n−k)·rᵀP_Z r / rᵀM_Z r."""
    basis = _basis(ds, basis)
    residual, annihilated = _annihilated_residual(ds, _as_beta(ds, beta0), basis)
    coordinates = basis.coordinates(residual)
    return float((ds.n - ds.k) * (coordinates @ coordinates) / (annihilated @ annihilated))


def _joint_pencil(ds: IVDataset, basis: ProjectionBasis):
    joint = np.column_stack((ds.y, ds.X))
    projected, annihilated = basis.gram_pair(joint)
    values, _ = pencil_eigh(projected, annihilated, what="M_Z Gram matrix of (y X)")
    return projected, annihilated, values


def liml_minimum(ds: IVDataset, basis: Optional[ProjectionBasis] = None) -> float:
    """min_b AR(b), i.e. (n−k) times the smallest eigenvalue of the (y X) pencil."""
    _, _, values = _joint_pencil(ds, _basis(ds, basis))
    kappa = clamp_nonnegative(values[:1], scale=float(np.max(np.abs(values))), what="LIML eigenvalue")[0]
    return float((ds.n - ds.k) * kappa)


def lr_statistic(ds: IVDataset, beta0: Sequence[float], basis: Optional[ProjectionBasis] = None) -> float:
    """LR(β₀) = AR(β₀) − min_b AR(b), clamped at zero for round-off.

    Raises:
        DegenerateResidualError: if M_Z(y − Xβ₀) vanishes
        SingularGramError: if (y X)ᵀM_Z(y X) is singular
        NumericalDegeneracyError: if the difference is negative beyond round-off
    """
    basis = _basis(ds, basis)
    ar = anderson_rubin(ds, beta0, basis)
    lr = ar - liml_minimum(ds, basis)
    if lr < -1e-8 * max(1.0, ar):
        logger.error(f"LR statistic is negative beyond round-off: {lr:.3e} (AR={ar:.6g})")
        raise NumericalDegeneracyError(f"LR statistic is negative beyond round-off: {lr:.3e}")
    return max(lr, 0.0)


def liml_estimate(ds: IVDataset, basis: Optional[ProjectionBasis] = None) -> np.ndarray:
    """b̂ = [Xᵀ(P_Z − κM_Z)X]⁻¹Xᵀ(P_Z − κM_Z)y, the minimizer of AR(b)."""
    projected, annihilated, values = _joint_pencil(ds, _basis(ds, basis))
    blended = projected - values[0] * annihilated
    try:
        estimate = scipy.linalg.solve(blended[1:, 1:], blended[1:, 0], assume_a="sym")
    except np.linalg.LinAlgError as e:
        logger.error(f"LIML normal equations are singular: {str(e)}")
        raise SingularGramError("singular LIML normal equations") from e
    return np.asarray(estimate, dtype=float)


def conditioning_eigenvalues(ds: IVDataset, beta0: Sequence[float],
                             basis: Optional[ProjectionBasis] = None) -> EigenSpectrum:
    """Eigenvalues of (n−k)[X̃ᵀM_Z X̃]⁻¹X̃ᵀP_Z X̃, ascending and clamped at zero."""
    basis = _basis(ds, basis)
    projected, annihilated = basis.gram_pair(tilde_x(ds, beta0, basis))
    values, _ = pencil_eigh(projected, annihilated, what="M_Z Gram matrix of X̃")
    values = (ds.n - ds.k) * values
    values = clamp_nonnegative(values, scale=float(np.max(np.abs(values))), what="conditioning eigenvalue")
    return EigenSpectrum(lambdas=values, k=ds.k, m=ds.m)


def run_clr_test(
        ds: IVDataset,
        beta0: Sequence[float],
        alpha: Optional[float] = None,
        draws: Optional[int] = None,
        seed: int = 0,
        threads: Optional[int] = None,
) -> TestResult:
    """Conditional likelihood-ratio test of H₀: β = β₀.

    Both p-values and both critical values come from one set of common chi-square
    draws, so the exact and bound columns differ only through the spectrum.
    """
    settings = get_settings()
    alpha = settings.DEFAULT_ALPHA if alpha is None else alpha
    check_level(alpha)
    if draws is None:
        draws = settings.PVALUE_DRAWS
    if draws < MIN_PVALUE_DRAWS:
        raise InsufficientDrawsError(f"p-values need at least {MIN_PVALUE_DRAWS} draws, got {draws}")

    validate_dataset(ds)
    beta = _as_beta(ds, beta0)
    basis = projection_basis(ds)

    ar = anderson_rubin(ds, beta, basis)
    lr = lr_statistic(ds, beta, basis)
    spectrum = conditioning_eigenvalues(ds, beta, basis)
    logger.info(f"LR={lr:.6g}, AR={ar:.6g}, spectrum={spectrum.lambdas} (n={ds.n}, k={ds.k}, m={ds.m})")

    exact, bound = conditional_samples(spectrum, draws, seed, threads=threads)
    result = TestResult(
        lr=lr,
        spectrum=spectrum,
        pvalue_exact=mc_pvalue(exact, lr),
        pvalue_bound=mc_pvalue(bound, lr),
        critical_value_exact=mc_quantile(exact, alpha),
        critical_value_bound=mc_quantile(bound, alpha),
        ar=ar,
        pvalue_ar=float(stats.chi2.sf(ar, ds.k)),
        alpha=alpha,
        mc_draws=draws,
        seed=seed,
        beta0=tuple(float(b) for b in beta),
    )
    logger.info(f"pvalue_exact={result.pvalue_exact:.6g}, pvalue_bound={result.pvalue_bound:.6g}")
    return result
