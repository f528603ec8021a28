from typing import List, Optional

from pydantic import BaseModel, Field


class TestRequest(BaseModel):
    """Schema for a CLR test request: data as row-major nested lists."""

    __test__ = False

    y: List[float]
    X: List[List[float]]
    Z: List[List[float]]
    beta0: List[float]
    alpha: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    draws: Optional[int] = Field(default=None, ge=1000)
    seed: int = Field(default=0, ge=0)


class TestResponse(BaseModel):
    """Schema for the result of a CLR test."""

    __test__ = False

    lr: float
    ar: float
    k: int
    m: int
    spectrum: List[float]
    beta0: List[float]
    pvalue_exact: float
    pvalue_bound: float
    pvalue_ar: float
    critical_value_exact: float
    critical_value_bound: float
    alpha: float
    reject_exact: bool
    reject_bound: bool
    just_identified: bool
    mc_draws: int
    seed: int


class CriticalValueRequest(BaseModel):
    """Schema for critical values at a given conditioning spectrum."""

    lambdas: List[float] = Field(min_length=1)
    k: int = Field(ge=1)
    alpha: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    draws: Optional[int] = Field(default=None, ge=1000)
    seed: int = Field(default=0, ge=0)


class CriticalValueResponse(BaseModel):
    critical_value_exact: float
    critical_value_bound: float
    chi2_limit: float
    k: int
    m: int
    alpha: float
    draws: int
    seed: int
