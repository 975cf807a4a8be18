"""
Base Pydantic configuration and shared schemas.
"""

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class BaseSchema(BaseModel):
    """Base schema with common configuration."""
    model_config = ConfigDict(
        from_attributes=True,
        str_strip_whitespace=True,
        validate_default=True,
        use_enum_values=True,
        extra="forbid",
    )


class KernelParams(BaseSchema):
    """Parameters of the symmetric Gaussian BAR kernel."""
    a: float = Field(..., gt=-1.0, lt=1.0)
    sigma: float = Field(1.0, ge=0.0)

    @field_validator("a")
    @classmethod
    def check_nonzero(cls, v: float) -> float:
        if v == 0.0:
            raise ValueError("a must be non-zero")
        return v


class ObservableSpec(BaseSchema):
    """An observable given by preset name or by Hermite coefficients."""
    preset: Optional[str] = None
    coefficients: Optional[list[float]] = None
    name: str = ""

    @model_validator(mode="after")
    def check_exactly_one(self):
        if (self.preset is None) == (self.coefficients is None):
            raise ValueError("Give exactly one of preset or coefficients")
        if self.coefficients is not None and not self.coefficients:
            raise ValueError("coefficients must not be empty")
        return self
