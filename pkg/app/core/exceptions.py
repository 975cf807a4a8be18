"""
Exception hierarchy.
Every error carries a CLI exit code and a short machine-readable code.
"""

from typing import Optional


class BmcError(Exception):
    """Base class for all laboratory errors."""

    exit_code: int = 1
    code: str = "BMC_ERROR"

    def __init__(self, message: str, detail: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.detail = detail


class ConfigError(BmcError):
    """Experiment file cannot be parsed or validated."""
    exit_code = 2
    code = "CONFIG_INVALID"


class RegimeError(BmcError):
    """Operation requested in the wrong regime, or regime conflict in config."""
    exit_code = 3
    code = "REGIME_MISMATCH"


class BudgetExceededError(BmcError):
    """Runtime budget exhausted before all replicates completed."""
    exit_code = 4
    code = "BUDGET_EXCEEDED"

    def __init__(self, message: str, completed: int = 0, partial=None):
        super().__init__(message)
        self.completed = completed
        self.partial = partial


class DepthOutOfRangeError(BmcError):
    """Tree depth beyond the supported index width."""
    code = "DEPTH_OUT_OF_RANGE"


class MemoryBudgetError(BmcError):
    """Up-front memory estimate above the configured budget."""
    code = "MEMORY_BUDGET"


class BasisMismatchError(BmcError):
    """Observables expanded on the basis of another kernel."""
    code = "BASIS_MISMATCH"


class DegenerateDiagnosticError(BmcError):
    """A diagnostic has no meaningful value for this input."""
    code = "DEGENERATE"


class InsufficientSamplesError(BmcError):
    """Not enough samples for the requested statistic."""
    code = "INSUFFICIENT_SAMPLES"
