"""
Limit variance API endpoint.
"""

from fastapi import APIRouter

from app.api.deps import get_kernel, get_observable, get_sequence, http_errors
from app.schemas.analytics import VarianceQuery, VarianceResult
from app.services.variance_service import variance_service

router = APIRouter(prefix="/variance", tags=["Variance"])


@router.post(
    "",
    response_model=VarianceResult,
    summary="Asymptotic variance",
    description="Sub-critical or critical limit variance with its truncation certificate.",
)
def asymptotic_variance(query: VarianceQuery):
    kernel = get_kernel(query.kernel)
    f = get_observable(query.observable, kernel)
    seq = get_sequence(query.sequence, kernel)
    with http_errors():
        report = variance_service.evaluate(query.kind, kernel, f=f, seq=seq, tol=query.tol)
    return VarianceResult(
        kind=report.kind,
        value=report.value,
        truncation_K=report.truncation_K,
        tail_bound=report.tail_bound,
        terms=report.terms,
    )
