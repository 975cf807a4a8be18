"""
Request/response schemas of the analytic endpoints (oracle, variance, regimes).
"""

from typing import Optional, Union

from pydantic import Field, model_validator

from app.models.enums import MomentKind, Regime, VarianceKind
from app.schemas.base import BaseSchema, KernelParams, ObservableSpec
from app.schemas.experiment import SequenceSection


# =====================
# Oracle
# =====================

class MomentQuery(BaseSchema):
    """Exact moment of M_{G_n}(f) started from x."""
    kernel: KernelParams
    kind: MomentKind = MomentKind.MEAN_GEN
    f: ObservableSpec
    g: Optional[ObservableSpec] = None
    n: int = Field(..., ge=0, le=60)
    m: Optional[int] = Field(None, ge=0)
    x: Union[float, list[float]] = 0.0

    @model_validator(mode="after")
    def check_cross(self):
        if self.kind == MomentKind.CROSS_GEN.value:
            if self.m is None:
                raise ValueError("cross_gen needs m")
            if self.m > self.n:
                raise ValueError("cross_gen needs m <= n")
        return self


class MomentResult(BaseSchema):
    kind: MomentKind
    n: int
    x: Union[float, list[float]]
    value: Union[float, list[float]]


# =====================
# Variance
# =====================

class VarianceQuery(BaseSchema):
    """Asymptotic variance of an observable or of an observable sequence."""
    kernel: KernelParams
    kind: VarianceKind
    observable: Optional[ObservableSpec] = None
    sequence: Optional[SequenceSection] = None
    tol: float = Field(1e-12, gt=0)


class VarianceResult(BaseSchema):
    kind: VarianceKind
    value: float
    truncation_K: int
    tail_bound: float
    terms: dict[str, float] = Field(default_factory=dict)


# =====================
# Regimes
# =====================

class RegimeRead(BaseSchema):
    """Regime of one value of a."""
    a: float
    sigma: float
    regime: Regime
    label: str
    normalization_exponent: float
    sigma_sub_G: Optional[float] = None
    scaled_sigma_sub_G: Optional[float] = None
