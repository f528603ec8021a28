from typing import ClassVar, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.exceptions import DimensionError, NonFiniteEntryError, RankDeficientError

# Smallest-to-largest singular value ratio below which Z counts as rank-deficient.
RANK_TOLERANCE = 1e-10


def _frozen_array(value, ndim: int) -> np.ndarray:
    array = np.array(value, dtype=float)
    if ndim == 1:
        array = array.reshape(-1)
    elif array.ndim == 1:
        array = array.reshape(-1, 1)
    if array.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got shape {array.shape}")
    array.setflags(write=False)
    return array


class IVDataset(BaseModel):
    """Observed data: outcome y (n), endogenous covariates X (n x m), instruments Z (n x k)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    @field_validator("y", mode="before")
    @classmethod
    def _vector(cls, value):
        return _frozen_array(value, ndim=1)

    @field_validator("X", "Z", mode="before")
    @classmethod
    def _matrix(cls, value):
        return _frozen_array(value, ndim=2)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.Z.shape[1]

    @property
    def m(self) -> int:
        return self.X.shape[1]


def validate_dataset(ds: IVDataset) -> None:
    """Raise one distinct error per violated IVDataset invariant; return None if valid."""
    n = ds.y.shape[0]
    if ds.X.shape[0] != n or ds.Z.shape[0] != n:
        raise DimensionError(
            f"row counts differ: y has {n}, X has {ds.X.shape[0]}, Z has {ds.Z.shape[0]}"
        )
    for name, array in (("y", ds.y), ("X", ds.X), ("Z", ds.Z)):
        if not np.all(np.isfinite(array)):
            raise NonFiniteEntryError(f"non-finite entry in {name}")
    if ds.m < 1:
        raise DimensionError("at least one endogenous column is required")
    if ds.k < ds.m:
        raise DimensionError(f"k < m: {ds.k} instruments for {ds.m} endogenous columns")
    if n <= ds.k:
        raise DimensionError(f"n ≤ k: {n} observations for {ds.k} instruments")

    singular_values = np.linalg.svd(ds.Z, compute_uv=False)
    if singular_values[0] == 0.0 or singular_values[-1] / singular_values[0] < RANK_TOLERANCE:
        raise RankDeficientError("instrument matrix rank-deficient")


class EigenSpectrum(BaseModel):
    """Conditioning eigenvalues λ₁ ≤ … ≤ λ_m together with the dimensions (k, m)."""

    model_config = ConfigDict(frozen=True)

    lambdas: Tuple[float, ...]
    k: int = Field(ge=1)
    m: int = Field(ge=1)

    @field_validator("lambdas", mode="before")
    @classmethod
    def _sorted(cls, value):
        values = sorted(float(v) for v in np.atleast_1d(np.asarray(value, dtype=float)))
        if any(not np.isfinite(v) or v < 0.0 for v in values):
            raise ValueError("eigenvalues must be finite and nonnegative")
        return tuple(values)

    @model_validator(mode="after")
    def _dimensions(self):
        if len(self.lambdas) != self.m:
            raise ValueError(f"expected {self.m} eigenvalues, got {len(self.lambdas)}")
        if self.k < self.m:
            raise ValueError(f"k ({self.k}) must be at least m ({self.m})")
        return self

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.lambdas, dtype=float)

    @property
    def smallest(self) -> float:
        return self.lambdas[0]

    @property
    def just_identified(self) -> bool:
        return self.k == self.m


class NullDraw(BaseModel):
    """One realization q₀ ~ χ²(k−m), q₁..q_m ~ χ²(1) of the conditional null law."""

    model_config = ConfigDict(frozen=True)

    q0: float = Field(ge=0.0)
    q: Tuple[float, ...]

    @field_validator("q", mode="before")
    @classmethod
    def _nonnegative(cls, value):
        values = tuple(float(v) for v in np.atleast_1d(np.asarray(value, dtype=float)))
        if any(v < 0.0 for v in values):
            raise ValueError("chi-square draws must be nonnegative")
        return values

    @property
    def total(self) -> float:
        return self.q0 + sum(self.q)


class MuSolveReport(BaseModel):
    """Outcome of the smallest-root search for one draw."""

    mu_min: float = Field(ge=0.0)
    iterations: int
    method: Literal["newton", "bisection-fallback", "degenerate-zero"]
    residual: float


class TestResult(BaseModel):
    """Likelihood-ratio statistic, spectrum, p-values and decisions for one hypothesis."""

    __test__ = False  # keep pytest from collecting this class

    lr: float = Field(ge=0.0)
    spectrum: EigenSpectrum
    pvalue_exact: float = Field(ge=0.0, le=1.0)
    pvalue_bound: float = Field(ge=0.0, le=1.0)
    critical_value_exact: float = Field(ge=0.0)
    critical_value_bound: float = Field(ge=0.0)
    ar: float = Field(ge=0.0)
    pvalue_ar: float = Field(ge=0.0, le=1.0)
    alpha: float = Field(gt=0.0, lt=1.0)
    mc_draws: int = Field(ge=1)
    seed: int
    beta0: Tuple[float, ...]

    @property
    def reject_exact(self) -> bool:
        return self.pvalue_exact < self.alpha

    @property
    def reject_bound(self) -> bool:
        return self.pvalue_bound < self.alpha

    def summary(self) -> dict:
        """Flat record used by the CLI writers and the HTTP response."""
        return {
            "lr": self.lr,
            "ar": self.ar,
            "k": self.spectrum.k,
            "m": self.spectrum.m,
            "spectrum": list(self.spectrum.lambdas),
            "beta0": list(self.beta0),
            "pvalue_exact": self.pvalue_exact,
            "pvalue_bound": self.pvalue_bound,
            "pvalue_ar": self.pvalue_ar,
            "critical_value_exact": self.critical_value_exact,
            "critical_value_bound": self.critical_value_bound,
            "alpha": self.alpha,
            "reject_exact": self.reject_exact,
            "reject_bound": self.reject_bound,
            "just_identified": self.spectrum.just_identified,
            "mc_draws": self.mc_draws,
            "seed": self.seed,
        }


class SimConfig(BaseModel):
    """Gaussian weak-instrument design: nΠᵀΠ = diag(spectrum), unit error variances."""

    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=1)
    k: int = Field(ge=1)
    m: int = Field(ge=1)
    spectrum: Tuple[float, ...]
    cov_eps_v: Optional[Tuple[float, ...]] = None
    beta0: Optional[Tuple[float, ...]] = None
    seed: int = 0
    reps: int = Field(default=1, ge=1)
    normalize_by_omega: bool = False

    @model_validator(mode="before")
    @classmethod
    def _defaults(cls, data):
        if isinstance(data, dict) and "m" in data:
            m = int(data["m"])
            if data.get("cov_eps_v") is None:
                data = {**data, "cov_eps_v": (-0.5,) + (0.0,) * (m - 1)}
            if data.get("beta0") is None:
                data = {**data, "beta0": (0.0,) * m}
        return data

    @model_validator(mode="after")
    def _check(self):
        if not self.n > self.k >= self.m:
            raise ValueError(f"need n > k >= m, got n={self.n}, k={self.k}, m={self.m}")
        for name in ("spectrum", "cov_eps_v", "beta0"):
            if len(getattr(self, name)) != self.m:
                raise ValueError(f"{name} must have length m={self.m}")
        if any(v < 0.0 for v in self.spectrum):
            raise ValueError("spectrum entries must be nonnegative")
        if np.linalg.eigvalsh(self.omega()).min() <= 0.0:
            raise ValueError("implied error covariance is not positive definite")
        return self

    def omega(self) -> np.ndarray:
        """(1+m)x(1+m) covariance of (ε, V_X) with unit variances."""
        omega = np.eye(self.m + 1)
        omega[0, 1:] = self.cov_eps_v
        omega[1:, 0] = self.cov_eps_v
        return omega

    def omega_v_dot_eps(self) -> np.ndarray:
        """Ω_V − Ω_{V,ε}Ω_{ε,V}/σ²_ε."""
        omega = self.omega()
        cross = omega[1:, :1]
        return omega[1:, 1:] - cross @ cross.T / omega[0, 0]


class ExperimentGrid(BaseModel):
    """Grid and scale of a size or power experiment."""

    model_config = ConfigDict(frozen=True)

    lambda1_values: Tuple[float, ...]
    lambda2_values: Tuple[float, ...]
    beta1_values: Tuple[float, ...] = ()
    reps: int = Field(ge=100)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    n: int = 1000
    k: int = 10
    m: int = 2
    seed: int = 0
    draws: Optional[int] = Field(default=None, ge=1000)
    cov_eps_v: Optional[Tuple[float, ...]] = None
    normalize_by_omega: bool = False

    @model_validator(mode="after")
    def _check(self):
        if not self.n > self.k >= self.m >= 1:
            raise ValueError(f"need n > k >= m >= 1, got n={self.n}, k={self.k}, m={self.m}")
        if not self.lambda1_values or not self.lambda2_values:
            raise ValueError("lambda grids must not be empty")
        if any(v < 0.0 for v in self.lambda1_values + self.lambda2_values):
            raise ValueError("lambda grid values must be nonnegative")
        return self

    def spectrum(self, lambda1: float, lambda2: float) -> Tuple[float, ...]:
        """Target spectrum (λ₁, λ₂, …, λ₂) of length m."""
        return (lambda1,) + (lambda2,) * (self.m - 1)

    def sim_config(self, lambda1: float, lambda2: float) -> SimConfig:
        return SimConfig(
            n=self.n,
            k=self.k,
            m=self.m,
            spectrum=self.spectrum(lambda1, lambda2),
            cov_eps_v=self.cov_eps_v,
            seed=self.seed,
            reps=self.reps,
            normalize_by_omega=self.normalize_by_omega,
        )


class RejectionRow(BaseModel):
    lambda1: float
    lambda2: float
    beta1: Optional[float] = None
    rate_exact: float = Field(ge=0.0, le=1.0)
    rate_bound: float = Field(ge=0.0, le=1.0)
    stderr: float = Field(ge=0.0)

    @property
    def difference(self) -> float:
        return self.rate_exact - self.rate_bound


class RejectionTable(BaseModel):
    """Empirical rejection rates of the exact and bound tests over a grid."""

    kind: Literal["size", "power"]
    alpha: float
    reps: int
    rows: List[RejectionRow]

    @property
    def columns(self) -> List[str]:
        if self.kind == "size":
            return ["lambda1", "lambda2", "rate_exact", "rate_bound", "stderr"]
        return ["lambda1", "lambda2", "beta1", "rate_exact", "rate_bound", "difference", "stderr"]

    def records(self) -> List[dict]:
        records = []
        for row in self.rows:
            record = row.model_dump()
            record["difference"] = row.difference
            records.append({column: record[column] for column in self.columns})
        return records

    def max_size_distortion(self) -> float:
        return max(abs(row.rate_exact - self.alpha) for row in self.rows)

    def max_power_difference(self) -> float:
        return max(row.difference for row in self.rows)


class SweepRow(BaseModel):
    delta1: float
    delta2: float
    q0: float
    lambda1: float
    lambda2: float
    critical_value_exact: float
    critical_value_bound: float
    chi2_limit: float


class SweepTable(BaseModel):
    """Critical-value curves against the realized q₀, one block per (Δλ₁, Δλ₂) setting."""

    k: int
    m: int
    alpha: float
    draws: int
    rows: List[SweepRow]

    columns: ClassVar[Tuple[str, ...]] = (
        "delta1", "delta2", "q0", "lambda1", "lambda2",
        "critical_value_exact", "critical_value_bound", "chi2_limit",
    )

    def records(self) -> List[dict]:
        return [row.model_dump() for row in self.rows]
