"""
Pydantic schemas for request/response validation.
Exports all schema classes for easy imports.
"""

# Base schemas
from app.schemas.base import (
    BaseSchema,
    KernelParams,
    ObservableSpec,
)

# Experiment files
from app.schemas.experiment import (
    ExperimentConfig,
    ExperimentSection,
    OracleSection,
    OutputSection,
    SequenceSection,
    SupercriticalSection,
    SweepSection,
    TolerancesSection,
    VarianceSection,
)

# Analytic endpoints
from app.schemas.analytics import (
    MomentQuery,
    MomentResult,
    RegimeRead,
    VarianceQuery,
    VarianceResult,
)
