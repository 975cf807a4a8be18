"""
Regime classification API endpoint.
"""

from fastapi import APIRouter, Query

from app.api.deps import http_errors
from app.models.enums import Regime
from app.schemas.analytics import RegimeRead
from app.services.variance_service import variance_service

router = APIRouter(prefix="/regimes", tags=["Regimes"])


@router.get(
    "",
    response_model=list[RegimeRead],
    summary="Regime phase picture",
    description="Regime, normalisation exponent and the scaled sub-critical variance of f(x) = x for each a.",
)
def regimes(
    a: list[float] = Query(..., description="Values of a in (-1, 1)"),
    sigma: float = Query(1.0, gt=0, description="Noise standard deviation"),
):
    with http_errors():
        rows = variance_service.regime_sweep(a, sigma)
    out = []
    for row in rows:
        regime = Regime(row["regime"])
        sub = regime is Regime.SUBCRITICAL
        out.append(RegimeRead(
            a=row["a"],
            sigma=sigma,
            regime=regime,
            label=regime.label,
            normalization_exponent=row["normalization_exponent"],
            sigma_sub_G=row["sigma_sub_G"] if sub else None,
            scaled_sigma_sub_G=row["scaled_sigma_sub_G"] if sub else None,
        ))
    return out
