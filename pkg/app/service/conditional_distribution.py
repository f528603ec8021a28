"""Conditional null law of the likelihood-ratio statistic.

Given the conditioning eigenvalues λ₁ ≤ … ≤ λ_m, the statistic converges to
Σqᵢ − μ_min, where μ_min is the smallest root of

    p(μ) = (μ − Σᵢ₌₀..m qᵢ)·∏(μ − λᵢ) − Σ λᵢqᵢ·∏_{j≠i}(μ − λⱼ),

q₀ ~ χ²(k−m) and q₁..q_m ~ χ²(1) independent. The root is found on the secular
form g(μ) = p(μ)/∏(μ − λᵢ), which is increasing and convex on [0, λ₁).
The closed-form law Γ(k−m, m, λ₁) that only conditions on λ₁ is provided as
the reference bound.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from app.config.config import get_settings
from app.exceptions import InputError, InsufficientDrawsError, PoleError
from app.model.model import EigenSpectrum, MuSolveReport, NullDraw
from app.service.random_streams import map_chunks

logger = logging.getLogger(__name__)

METHODS = ("newton", "bisection-fallback", "degenerate-zero")
NEWTON, BISECTION, DEGENERATE = 0, 1, 2

MAX_NEWTON_ITERATIONS = 200
MAX_BISECTIONS = 2000
DEGENERATE_LAMBDA = 1e-12
DEGENERATE_Q0 = 1e-14
MIN_PVALUE_DRAWS = 1000
_EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# Polynomial, secular function and arrowhead determinant
# ---------------------------------------------------------------------------

def arrowhead_matrix(d: Sequence[float], a: Sequence[float]) -> np.ndarray:
    """Symmetric arrowhead matrix with diagonal d₀..d_l and first row/column a₁..a_l."""
    d = np.asarray(d, dtype=float)
    a = np.asarray(a, dtype=float)
    matrix = np.diag(d)
    matrix[0, 1:] = a
    matrix[1:, 0] = a
    return matrix


def eval_arrowhead_det(d: Sequence[float], a: Sequence[float]) -> float:
    """Closed-form determinant ∏dᵢ − Σ aᵢ²·∏_{j≥1, j≠i} dⱼ, valid for zero dᵢ as well."""
    d = np.asarray(d, dtype=float)
    a = np.asarray(a, dtype=float)
    if d.shape[0] != a.shape[0] + 1:
        raise ValueError(f"need len(d) == len(a) + 1, got {d.shape[0]} and {a.shape[0]}")
    tail = d[1:]
    cofactors = [np.prod(np.delete(tail, i)) for i in range(tail.shape[0])]
    return float(np.prod(d) - np.dot(a ** 2, cofactors))


def eval_char_poly(spectrum: EigenSpectrum, draw: NullDraw, mu: float) -> float:
    """p(μ), evaluated as det(μ·Id − Σ) of the arrowhead matrix with aᵢ² = λᵢqᵢ."""
    lam = spectrum.array
    q = np.asarray(draw.q, dtype=float)
    d = np.concatenate(([mu - draw.total], mu - lam))
    return eval_arrowhead_det(d, np.sqrt(lam * q))


def eval_secular(spectrum: EigenSpectrum, draw: NullDraw, mu: float) -> Tuple[float, float]:
    """g(μ) and g′(μ); raises PoleError when μ coincides with an eigenvalue."""
    lam = spectrum.array
    q = np.asarray(draw.q, dtype=float)
    gap = mu - lam
    if np.any(np.abs(gap) <= _EPS * np.maximum(1.0, np.abs(lam))):
        raise PoleError(f"secular function evaluated at a pole: mu={mu!r}")
    # μ − S − Σλq/(μ−λ) rewritten as μ − q₀ + μΣq/(λ−μ), free of cancellation near 0
    g = mu - draw.q0 - mu * np.sum(q / gap)
    g_prime = 1.0 + np.sum(lam * q / gap ** 2)
    return float(g), float(g_prime)


def _secular_rows(mu: np.ndarray, lam: np.ndarray, q: np.ndarray, q0: np.ndarray):
    gap = mu[:, None] - lam
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(q != 0.0, q / gap, 0.0)
        slope = np.where(q != 0.0, lam * ratio / gap, 0.0)
    return mu - q0 - mu * ratio.sum(axis=1), 1.0 + slope.sum(axis=1)


# ---------------------------------------------------------------------------
# Smallest root
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MuBatch:
    """Smallest roots for a batch of draws, with per-draw solver diagnostics."""

    mu_min: np.ndarray
    iterations: np.ndarray
    method: np.ndarray
    residual: np.ndarray

    def report(self, i: int = 0) -> MuSolveReport:
        return MuSolveReport(
            mu_min=float(self.mu_min[i]),
            iterations=int(self.iterations[i]),
            method=METHODS[int(self.method[i])],
            residual=float(self.residual[i]),
        )


def _merge_poles(lam: np.ndarray, q: np.ndarray):
    """Collapse repeated eigenvalues into one pole carrying the summed q weights."""
    unique, inverse = np.unique(lam, return_inverse=True)
    if unique.shape[0] == lam.shape[0]:
        return lam, q
    indicator = (inverse[:, None] == np.arange(unique.shape[0])[None, :]).astype(float)
    return unique, q @ indicator


def solve_mu_min_batch(lambdas, q0, q) -> MuBatch:
    """Safeguarded Newton for μ_min over N draws at once.

    lambdas is either a shared spectrum (m,) or one spectrum per draw (N, m);
    q0 has shape (N,) and q shape (N, m).
    """
    q0 = np.asarray(q0, dtype=float).reshape(-1)
    size = q0.shape[0]
    q = np.asarray(q, dtype=float).reshape(size, -1)
    lam = np.asarray(lambdas, dtype=float)
    total = q0 + q.sum(axis=1)

    if lam.ndim == 1:
        lam, q = _merge_poles(np.sort(lam), q)

        def lam_rows(idx):
            return lam[None, :]

        lam1 = np.full(size, lam[0])
        lam_max = np.full(size, lam[-1])
    else:
        order = np.argsort(lam, axis=1)
        lam = np.take_along_axis(lam, order, axis=1)
        q = np.take_along_axis(q, order, axis=1)

        def lam_rows(idx):
            return lam[idx]

        lam1 = lam[:, 0]
        lam_max = lam[:, -1]

    mu = np.zeros(size)
    iterations = np.zeros(size, dtype=int)
    method = np.full(size, NEWTON)
    residual = np.zeros(size)

    degenerate = (lam1 <= DEGENERATE_LAMBDA * np.maximum(1.0, lam_max)) | (q0 <= DEGENERATE_Q0)
    method[degenerate] = DEGENERATE
    idx = np.flatnonzero(~degenerate)
    if idx.size == 0:
        return MuBatch(mu, iterations, method, residual)

    lo = np.zeros(size)
    hi = np.minimum(lam1, q0)

    # Smaller root of the quadratic obtained with every λᵢ replaced by λ₁; it lies
    # left of μ_min, so g ≤ 0 there.
    s = total + lam1
    root = np.sqrt(np.maximum(s * s - 4.0 * q0 * lam1, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        start = np.where(s > 0.0, 2.0 * q0 * lam1 / (s + root), 0.0)
    mu = np.where(start < hi, start, 0.5 * hi)
    mu[degenerate] = 0.0
    previous = np.full(size, np.inf)

    for iteration in range(1, MAX_NEWTON_ITERATIONS + 1):
        x = mu[idx]
        g, g_prime = _secular_rows(x, lam_rows(idx), q[idx], q0[idx])
        iterations[idx] = iteration

        below, above = g < 0.0, g > 0.0
        lo[idx[below]] = x[below]
        hi[idx[above]] = x[above]
        lo_i, hi_i = lo[idx], hi[idx]

        with np.errstate(divide="ignore", invalid="ignore"):
            candidate = x - g / g_prime
        newton_ok = (
            np.isfinite(candidate)
            & (candidate >= lo_i)
            & (candidate <= hi_i)
            & (candidate < lam1[idx])
            & (np.abs(g) < previous[idx])
        )
        step = np.where(newton_ok, candidate, 0.5 * (lo_i + hi_i))
        previous[idx] = np.abs(g)

        done = (
            (g == 0.0)
            | (np.abs(step - x) <= 4.0 * _EPS * np.abs(step))
            | (hi_i - lo_i <= 4.0 * _EPS * hi_i)
        )
        method[idx[~newton_ok & ~done]] = BISECTION
        mu[idx] = np.where(g == 0.0, x, step)
        idx = idx[~done]
        if idx.size == 0:
            break

    if idx.size:
        logger.debug(f"{idx.size} draws hit the Newton cap; bisecting")
        method[idx] = BISECTION
        _bisect(mu, lo, hi, idx, lam_rows, q, q0, iterations)

    solved = np.flatnonzero(~degenerate)
    mu[solved] = np.clip(mu[solved], 0.0, np.minimum(lam1, q0)[solved])
    g, _ = _secular_rows(mu[solved], lam_rows(solved), q[solved], q0[solved])
    residual[solved] = np.where(np.isfinite(g), np.abs(g), hi[solved] - lo[solved])
    return MuBatch(mu, iterations, method, residual)


def _bisect(mu, lo, hi, idx, lam_rows, q, q0, iterations):
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo[idx] + hi[idx])
        g, _ = _secular_rows(mid, lam_rows(idx), q[idx], q0[idx])
        lo[idx] = np.where(g < 0.0, mid, lo[idx])
        hi[idx] = np.where(g < 0.0, hi[idx], mid)
        iterations[idx] += 1
        mu[idx] = 0.5 * (lo[idx] + hi[idx])
        idx = idx[hi[idx] - lo[idx] > 4.0 * _EPS * hi[idx]]
        if idx.size == 0:
            return


def solve_mu_min(spectrum: EigenSpectrum, draw: NullDraw) -> MuSolveReport:
    """Unique root of g in [0, λ₁), with 0 ≤ μ_min ≤ min(λ₁, q₀)."""
    batch = solve_mu_min_batch(spectrum.array, [draw.q0], [list(draw.q)])
    report = batch.report(0)
    logger.debug(f"mu_min={report.mu_min:.12g} via {report.method} in {report.iterations} iterations")
    return report


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def draw_null(rng: np.random.Generator, k: int, m: int, size: int):
    """q₀ ~ χ²(k−m) (identically 0 when k = m) and q (size x m) of independent χ²(1)."""
    if k > m:
        q0 = rng.gamma((k - m) / 2.0, 2.0, size=size)
    else:
        q0 = np.zeros(size)
    q = rng.gamma(0.5, 2.0, size=(size, m))
    return q0, q


def null_lr_from_draws(lambdas, q0, q) -> np.ndarray:
    """Σqᵢ − μ_min for each draw."""
    q0 = np.asarray(q0, dtype=float)
    q = np.asarray(q, dtype=float)
    total = q0 + q.sum(axis=1)
    return np.maximum(total - solve_mu_min_batch(lambdas, q0, q).mu_min, 0.0)


def gamma_bound_from_draws(q0, q1, lambda1) -> np.ndarray:
    """Γ(k−m, m, λ₁) = ½(q₀ + q₁ − λ₁ + √((q₀+q₁+λ₁)² − 4q₀λ₁)), in cancellation-free form."""
    q0 = np.asarray(q0, dtype=float)
    total = q0 + np.asarray(q1, dtype=float)
    lambda1 = np.asarray(lambda1, dtype=float)
    s = total + lambda1
    root = np.sqrt(np.maximum(s * s - 4.0 * q0 * lambda1, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        smaller = np.where(s > 0.0, 2.0 * q0 * lambda1 / (s + root), 0.0)
    return np.maximum(total - smaller, 0.0)


def sample_null_lr(spectrum: EigenSpectrum, rng: np.random.Generator) -> float:
    """One draw of the conditional limit law of LR(β₀)."""
    q0, q = draw_null(rng, spectrum.k, spectrum.m, 1)
    return float(null_lr_from_draws(spectrum.array, q0, q)[0])


def sample_gamma_bound(k: int, m: int, lambda1: float, rng: np.random.Generator) -> float:
    """One draw of Γ(k−m, m, λ₁); q₁ ~ χ²(m) is built from m χ²(1) draws."""
    q0, q = draw_null(rng, k, m, 1)
    return float(gamma_bound_from_draws(q0, q.sum(axis=1), lambda1)[0])


def conditional_samples(
        spectrum: EigenSpectrum,
        draws: int,
        seed: int,
        key: Sequence[int] = (),
        threads: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Exact and bound null samples computed from common chi-square draws."""

    def chunk(rng: np.random.Generator, size: int):
        q0, q = draw_null(rng, spectrum.k, spectrum.m, size)
        exact = null_lr_from_draws(spectrum.array, q0, q)
        bound = gamma_bound_from_draws(q0, q.sum(axis=1), spectrum.smallest)
        return exact, bound

    parts = map_chunks(chunk, draws, seed, key=key, threads=threads)
    return (
        np.concatenate([exact for exact, _ in parts]),
        np.concatenate([bound for _, bound in parts]),
    )


def null_lr_samples(spectrum: EigenSpectrum, draws: int, seed: int, key: Sequence[int] = (),
                    threads: Optional[int] = None) -> np.ndarray:
    return conditional_samples(spectrum, draws, seed, key=key, threads=threads)[0]


def gamma_bound_samples(k: int, m: int, lambda1: float, draws: int, seed: int,
                        key: Sequence[int] = (), threads: Optional[int] = None) -> np.ndarray:
    def chunk(rng: np.random.Generator, size: int):
        q0, q = draw_null(rng, k, m, size)
        return gamma_bound_from_draws(q0, q.sum(axis=1), lambda1)

    return np.concatenate(map_chunks(chunk, draws, seed, key=key, threads=threads))


# ---------------------------------------------------------------------------
# p-values and critical values
# ---------------------------------------------------------------------------

def mc_pvalue(samples: np.ndarray, lr_obs: float) -> float:
    """Add-one Monte Carlo p-value (1 + #{samples ≥ lr_obs}) / (1 + N)."""
    exceedances = int(np.count_nonzero(samples >= lr_obs))
    return (1.0 + exceedances) / (1.0 + samples.shape[0])


def check_level(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie strictly between 0 and 1, got {alpha}")


def check_quantile_draws(draws: int, alpha: float) -> None:
    check_level(alpha)
    if draws * min(alpha, 1.0 - alpha) < 50:
        raise InsufficientDrawsError(
            f"{draws} draws are too few for alpha={alpha}; need draws·min(alpha, 1−alpha) ≥ 50"
        )


def mc_quantile(samples: np.ndarray, alpha: float) -> float:
    """Nearest-rank-above (1−α)-quantile: the ⌈(1−α)·N⌉-th order statistic."""
    size = samples.shape[0]
    check_quantile_draws(size, alpha)
    rank = max(1, math.ceil((1.0 - alpha) * size - 1e-9))
    return float(np.partition(samples, rank - 1)[rank - 1])


def _check_pvalue_draws(draws: int) -> None:
    if draws < MIN_PVALUE_DRAWS:
        raise InsufficientDrawsError(f"p-values need at least {MIN_PVALUE_DRAWS} draws, got {draws}")


def pvalue_exact(lr_obs: float, spectrum: EigenSpectrum, draws: Optional[int] = None,
                 seed: int = 0, threads: Optional[int] = None) -> float:
    if draws is None:
        draws = get_settings().PVALUE_DRAWS
    _check_pvalue_draws(draws)
    return mc_pvalue(null_lr_samples(spectrum, draws, seed, threads=threads), lr_obs)


def pvalue_bound(lr_obs: float, k: int, m: int, lambda1: float, draws: Optional[int] = None,
                 seed: int = 0, threads: Optional[int] = None) -> float:
    if draws is None:
        draws = get_settings().PVALUE_DRAWS
    _check_pvalue_draws(draws)
    return mc_pvalue(gamma_bound_samples(k, m, lambda1, draws, seed, threads=threads), lr_obs)


def critical_value_exact(alpha: float, spectrum: EigenSpectrum, draws: Optional[int] = None,
                         seed: int = 0, threads: Optional[int] = None) -> float:
    if draws is None:
        draws = get_settings().CRITVAL_DRAWS
    check_quantile_draws(draws, alpha)
    return mc_quantile(null_lr_samples(spectrum, draws, seed, threads=threads), alpha)


def critical_value_bound(alpha: float, k: int, m: int, lambda1: float, draws: Optional[int] = None,
                         seed: int = 0, threads: Optional[int] = None) -> float:
    if draws is None:
        draws = get_settings().CRITVAL_DRAWS
    check_quantile_draws(draws, alpha)
    return mc_quantile(gamma_bound_samples(k, m, lambda1, draws, seed, threads=threads), alpha)
