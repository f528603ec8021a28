"""Gaussian weak-instrument designs and the size, power and critical-value experiments."""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy import stats

from app.config.config import get_settings
from app.exceptions import GridError
from app.model.model import (
    EigenSpectrum,
    ExperimentGrid,
    IVDataset,
    RejectionRow,
    RejectionTable,
    SimConfig,
    SweepRow,
    SweepTable,
)
from app.service.clr_statistic import conditioning_eigenvalues, lr_statistic
from app.service.conditional_distribution import (
    check_quantile_draws,
    conditional_samples,
    mc_pvalue,
    mc_quantile,
)
from app.service.projection import projection_basis
from app.service.random_streams import run_parallel, substream

logger = logging.getLogger(__name__)

SWEEP_PRESETS: Tuple[Tuple[float, float], ...] = ((5.0, 5.0), (5.0, 50.0), (10.0, 10.0), (10.0, 100.0))
# (k, m) with m in {2, 4} and k in {1.5m, 2.5m, 5m}
SWEEP_FAMILIES: Tuple[Tuple[int, int], ...] = ((3, 2), (5, 2), (10, 2), (6, 4), (10, 4), (20, 4))

FULL_SCALE_SIZE_REPS = 50_000
FULL_SCALE_POWER_REPS = 20_000


def log_grid(low: float = 1.0, high: float = 100.0, count: int = 21) -> Tuple[float, ...]:
    return tuple(float(v) for v in np.logspace(np.log10(low), np.log10(high), count))


def linear_grid(low: float = -1.0, high: float = 1.0, count: int = 41) -> Tuple[float, ...]:
    return tuple(float(v) for v in np.linspace(low, high, count))


def full_scale_size_grid(**overrides) -> ExperimentGrid:
    """21 x 21 logarithmic (λ₁, λ₂) grid on [1, 100] with 50,000 replications."""
    values = log_grid()
    options = {"lambda1_values": values, "lambda2_values": values, "reps": FULL_SCALE_SIZE_REPS}
    return ExperimentGrid(**{**options, **overrides})


def full_scale_power_grid(lambda1_fixed: float = 5.0, **overrides) -> ExperimentGrid:
    """21 λ₂ values on [1, 100] against 41 β₁ values on [−1, 1], 20,000 replications."""
    options = {
        "lambda1_values": (lambda1_fixed,),
        "lambda2_values": log_grid(),
        "beta1_values": linear_grid(),
        "reps": FULL_SCALE_POWER_REPS,
    }
    return ExperimentGrid(**{**options, **overrides})


def _symmetric_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = scipy.linalg.eigh(matrix)
    return (vectors * np.sqrt(np.maximum(values, 0.0))) @ vectors.T


def first_stage(cfg: SimConfig) -> np.ndarray:
    """Π (k x m) with √(λⱼ/n) in entry (j, j), so that nΠᵀΠ = diag(spectrum).

    With normalize_by_omega the targets become the eigenvalues of nΩ_{V·ε}⁻¹ΠᵀΠ.
    """
    pi = np.zeros((cfg.k, cfg.m))
    pi[np.arange(cfg.m), np.arange(cfg.m)] = np.sqrt(np.asarray(cfg.spectrum) / cfg.n)
    if cfg.normalize_by_omega:
        pi = pi @ _symmetric_sqrt(cfg.omega_v_dot_eps())
    return pi


def gen_gaussian_iv(cfg: SimConfig, rng: np.random.Generator) -> IVDataset:
    """y = Xβ₀ + ε, X = ZΠ + V_X with Z ~ N(0, Id_k) rows and (ε, V_X) ~ N(0, Ω)."""
    Z = rng.standard_normal((cfg.n, cfg.k))
    chol = scipy.linalg.cholesky(cfg.omega(), lower=True)
    errors = rng.standard_normal((cfg.n, cfg.m + 1)) @ chol.T
    X = Z @ first_stage(cfg) + errors[:, 1:]
    y = X @ np.asarray(cfg.beta0, dtype=float) + errors[:, 0]
    return IVDataset(y=y, X=X, Z=Z)


def _reject(ds: IVDataset, basis, beta: np.ndarray, alpha: float, draws: int, seed: int,
            key: Sequence[int]) -> Tuple[bool, bool]:
    lr = lr_statistic(ds, beta, basis)
    spectrum = conditioning_eigenvalues(ds, beta, basis)
    exact, bound = conditional_samples(spectrum, draws, seed, key=key, threads=1)
    return mc_pvalue(exact, lr) < alpha, mc_pvalue(bound, lr) < alpha


def _rates(rejections: np.ndarray, reps: int) -> Tuple[float, float, float]:
    rate_exact, rate_bound = rejections.mean(axis=0)
    stderr = float(np.sqrt(rate_exact * (1.0 - rate_exact) / reps))
    return float(rate_exact), float(rate_bound), stderr


def _experiment_draws(grid: ExperimentGrid) -> int:
    return get_settings().EXPERIMENT_DRAWS if grid.draws is None else grid.draws


def run_size_experiment(grid: ExperimentGrid, threads: Optional[int] = None) -> RejectionTable:
    """Null rejection rates at every (λ₁, λ₂) grid point, testing β₀ = 0 on data generated under it.

    Replication r of grid point g draws its data from stream (seed, g, r, 0) and its
    Monte Carlo null sample from (seed, g, r, 1, ·).
    """
    draws = _experiment_draws(grid)
    beta = np.zeros(grid.m)
    points = [(l1, l2) for l1 in grid.lambda1_values for l2 in grid.lambda2_values]
    rows: List[RejectionRow] = []

    for g, (lambda1, lambda2) in enumerate(points):
        cfg = grid.sim_config(lambda1, lambda2)

        def replicate(r: int) -> Tuple[bool, bool]:
            ds = gen_gaussian_iv(cfg, substream(grid.seed, g, r, 0))
            return _reject(ds, projection_basis(ds), beta, grid.alpha, draws, grid.seed, (g, r, 1))

        rejections = np.asarray(run_parallel(replicate, grid.reps, threads), dtype=float)
        rate_exact, rate_bound, stderr = _rates(rejections, grid.reps)
        rows.append(RejectionRow(lambda1=lambda1, lambda2=lambda2, rate_exact=rate_exact,
                                 rate_bound=rate_bound, stderr=stderr))
        logger.info(f"size point {g + 1}/{len(points)} (λ₁={lambda1:.4g}, λ₂={lambda2:.4g}): "
                    f"exact={rate_exact:.4f}, bound={rate_bound:.4f}")

    return RejectionTable(kind="size", alpha=grid.alpha, reps=grid.reps, rows=rows)


def run_power_experiment(grid: ExperimentGrid, lambda1_fixed: float,
                         threads: Optional[int] = None) -> RejectionTable:
    """Rejection rates of H₀: β = β₁e₁ on data generated with β₀ = 0, over (λ₂, β₁).

    Each dataset is drawn once from stream (seed, g, r, 0) and tested at every β₁;
    the test at the b-th β₁ samples its null law from (seed, g, r, 1 + b, ·).
    """
    if not grid.beta1_values:
        raise GridError("power experiment needs at least one beta1 value")
    if lambda1_fixed < 0.0:
        raise GridError(f"lambda1 must be nonnegative, got {lambda1_fixed}")

    draws = _experiment_draws(grid)
    hypotheses = []
    for beta1 in grid.beta1_values:
        beta = np.zeros(grid.m)
        beta[0] = beta1
        hypotheses.append(beta)

    rows: List[RejectionRow] = []
    for g, lambda2 in enumerate(grid.lambda2_values):
        cfg = grid.sim_config(lambda1_fixed, lambda2)

        def replicate(r: int) -> np.ndarray:
            ds = gen_gaussian_iv(cfg, substream(grid.seed, g, r, 0))
            basis = projection_basis(ds)
            return np.asarray([
                _reject(ds, basis, beta, grid.alpha, draws, grid.seed, (g, r, 1 + b))
                for b, beta in enumerate(hypotheses)
            ], dtype=float)

        rejections = np.stack(run_parallel(replicate, grid.reps, threads))
        for b, beta1 in enumerate(grid.beta1_values):
            rate_exact, rate_bound, stderr = _rates(rejections[:, b, :], grid.reps)
            rows.append(RejectionRow(lambda1=lambda1_fixed, lambda2=lambda2, beta1=beta1,
                                     rate_exact=rate_exact, rate_bound=rate_bound, stderr=stderr))
        logger.info(f"power point {g + 1}/{len(grid.lambda2_values)} (λ₂={lambda2:.4g}) done")

    return RejectionTable(kind="power", alpha=grid.alpha, reps=grid.reps, rows=rows)


def sweep_q0(k: int, m: int, points: int, seed: int) -> np.ndarray:
    """Sorted q₀ ~ χ²(k−m) realizations from stream (seed, 0); shared by every sweep setting."""
    return np.sort(substream(seed, 0).gamma((k - m) / 2.0, 2.0, size=points))


def run_critval_sweep(
        k: int,
        m: int,
        delta1: float,
        delta2: float,
        alpha: float = 0.05,
        draws: Optional[int] = None,
        seed: int = 0,
        points: Optional[int] = None,
        threads: Optional[int] = None,
) -> SweepTable:
    """Critical values of the exact and bound laws along λ₁ = Δλ₁ + q₀, λ₂..λ_m = Δλ₂ + q₀.

    Point i samples its null law from stream (seed, 1, i, ·), identical across
    settings, so curves for different (Δλ₁, Δλ₂) are compared at matched q₀.
    """
    if not k > m >= 1:
        raise GridError(f"critical-value sweep needs k > m >= 1, got k={k}, m={m}")
    if delta1 < 0.0 or delta2 < 0.0:
        raise GridError(f"deltas must be nonnegative, got ({delta1}, {delta2})")
    settings = get_settings()
    if draws is None:
        draws = settings.CRITVAL_DRAWS
    if points is None:
        points = settings.SWEEP_POINTS
    if points < 1:
        raise GridError(f"sweep needs at least one q0 point, got {points}")
    check_quantile_draws(draws, alpha)
    chi2_limit = float(stats.chi2.ppf(1.0 - alpha, m))

    rows: List[SweepRow] = []
    for i, q0 in enumerate(sweep_q0(k, m, points, seed)):
        lambda1, lambda2 = delta1 + q0, delta2 + q0
        spectrum = EigenSpectrum(lambdas=(lambda1,) + (lambda2,) * (m - 1), k=k, m=m)
        exact, bound = conditional_samples(spectrum, draws, seed, key=(1, i), threads=threads)
        rows.append(SweepRow(
            delta1=delta1,
            delta2=delta2,
            q0=float(q0),
            lambda1=float(lambda1),
            lambda2=float(lambda2),
            critical_value_exact=mc_quantile(exact, alpha),
            critical_value_bound=mc_quantile(bound, alpha),
            chi2_limit=chi2_limit,
        ))
    logger.info(f"sweep (Δλ₁={delta1:g}, Δλ₂={delta2:g}) finished with {len(rows)} points")
    return SweepTable(k=k, m=m, alpha=alpha, draws=draws, rows=rows)


def run_critval_presets(k: int = 10, m: int = 2, alpha: float = 0.05, draws: Optional[int] = None,
                        seed: int = 0, points: Optional[int] = None,
                        threads: Optional[int] = None) -> SweepTable:
    """All four standard (Δλ₁, Δλ₂) settings stacked into one table."""
    tables = [
        run_critval_sweep(k, m, delta1, delta2, alpha, draws, seed, points, threads)
        for delta1, delta2 in SWEEP_PRESETS
    ]
    rows = [row for table in tables for row in table.rows]
    return SweepTable(k=k, m=m, alpha=alpha, draws=tables[0].draws, rows=rows)


def run_critval_families(
        families: Sequence[Tuple[int, int]] = SWEEP_FAMILIES,
        alpha: float = 0.05,
        draws: Optional[int] = None,
        seed: int = 0,
        points: Optional[int] = None,
        threads: Optional[int] = None,
        deltas: Optional[Tuple[float, float]] = None,
) -> List[SweepTable]:
    """One sweep table per (k, m) family: the four presets, or a single (Δλ₁, Δλ₂) setting."""
    if not families:
        raise GridError("family sweep needs at least one (k, m) pair")
    tables = []
    for k, m in families:
        if deltas is None:
            tables.append(run_critval_presets(k, m, alpha, draws, seed, points, threads))
        else:
            tables.append(run_critval_sweep(k, m, deltas[0], deltas[1], alpha, draws, seed, points, threads))
        logger.info(f"family (k={k}, m={m}) finished")
    return tables
