"""
Oracle API endpoints.
Exact many-to-one moments of generation sums.
"""

import numpy as np
from fastapi import APIRouter

from app.api.deps import get_kernel, get_observable, http_errors
from app.schemas.analytics import MomentQuery, MomentResult
from app.services.oracle_service import MomentRequest, oracle_service

router = APIRouter(prefix="/oracle", tags=["Oracle"])


@router.post(
    "/moment",
    response_model=MomentResult,
    summary="Exact moment",
    description="E_x[M_{G_n}(f)], E_x[M_{G_n}(f)^2] or E_x[M_{G_n}(f) M_{G_m}(g)] for the BAR kernel.",
)
def exact_moment(query: MomentQuery):
    kernel = get_kernel(query.kernel)
    f = get_observable(query.f, kernel)
    g = get_observable(query.g, kernel) if query.g is not None else f
    x = np.asarray(query.x, dtype=float) if isinstance(query.x, list) else query.x
    with http_errors():
        request = MomentRequest(kind=query.kind, f=f, n=query.n, x=x, g=g, m=query.m)
        value = oracle_service.evaluate(request, kernel)
    value = value.tolist() if isinstance(value, np.ndarray) else float(value)
    return MomentResult(kind=query.kind, n=query.n, x=query.x, value=value)
