import logging

from fastapi import APIRouter, HTTPException
from pydantic import ValidationError
from scipy import stats

from app.config.config import get_settings
from app.exceptions import InputError, NumericalDegeneracyError
from app.model.model import EigenSpectrum, IVDataset
from app.model.schema import CriticalValueRequest, CriticalValueResponse, TestRequest, TestResponse
from app.service.clr_statistic import run_clr_test
from app.service.conditional_distribution import critical_value_bound, critical_value_exact

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/clr", tags=["clr"])


@router.post("/test", response_model=TestResponse)
def clr_test(request: TestRequest) -> TestResponse:
    """Runs the conditional likelihood-ratio test of H0: beta = beta0 on the posted data."""
    try:
        ds = IVDataset(y=request.y, X=request.X, Z=request.Z)
        result = run_clr_test(ds, request.beta0, alpha=request.alpha, draws=request.draws, seed=request.seed)
        return TestResponse(**result.summary())
    except (InputError, ValidationError) as e:
        logger.error(f"Rejected CLR test request: {str(e)}")
        raise HTTPException(status_code=422, detail=str(e))
    except NumericalDegeneracyError as e:
        logger.error(f"CLR test is numerically degenerate: {str(e)}")
        raise HTTPException(status_code=409, detail=str(e))


@router.post("/critical-value", response_model=CriticalValueResponse)
def critical_value(request: CriticalValueRequest) -> CriticalValueResponse:
    """Exact and bound critical values for a conditioning spectrum."""
    settings = get_settings()
    alpha = request.alpha if request.alpha is not None else settings.DEFAULT_ALPHA
    draws = settings.CRITVAL_DRAWS if request.draws is None else request.draws
    try:
        spectrum = EigenSpectrum(lambdas=request.lambdas, k=request.k, m=len(request.lambdas))
        return CriticalValueResponse(
            critical_value_exact=critical_value_exact(alpha, spectrum, draws, request.seed),
            critical_value_bound=critical_value_bound(alpha, spectrum.k, spectrum.m, spectrum.smallest,
                                                      draws, request.seed),
            chi2_limit=float(stats.chi2.ppf(1.0 - alpha, spectrum.m)),
            k=spectrum.k,
            m=spectrum.m,
            alpha=alpha,
            draws=draws,
            seed=request.seed,
        )
    except (InputError, ValidationError) as e:
        logger.error(f"Rejected critical-value request: {str(e)}")
        raise HTTPException(status_code=422, detail=str(e))
    except NumericalDegeneracyError as e:
        logger.error(f"Critical-value computation is numerically degenerate: {str(e)}")
        raise HTTPException(status_code=409, detail=str(e))
