"""
Enumeration types shared by services, schemas and the CLI.
"""

import enum


class Regime(str, enum.Enum):
    """Competition between the ergodicity rate and the reproduction factor."""
    SUBCRITICAL = "sub"
    CRITICAL = "critical"
    SUPERCRITICAL = "super"

    @property
    def label(self) -> str:
        return {"sub": "sub-critical", "critical": "critical", "super": "super-critical"}[self.value]


class TailMode(str, enum.Enum):
    """How an observable sequence continues after its last explicit entry."""
    ZERO = "zero"
    CONSTANT = "constant"


class InitialLaw(str, enum.Enum):
    """Law of the root state."""
    POINT = "point"
    STATIONARY = "stationary"


class MomentKind(str, enum.Enum):
    """Many-to-one moment requested from the oracle."""
    MEAN_GEN = "mean_gen"
    SECOND_GEN = "second_gen"
    CROSS_GEN = "cross_gen"


class Statistic(str, enum.Enum):
    """Additive functional normalised in a CLT check."""
    GENERATION = "generation"
    TREE = "tree"


class VarianceKind(str, enum.Enum):
    """Asymptotic variance requested from the variance service."""
    SUB_G = "sub_G"
    SUB_T = "sub_T"
    SUB_SEQUENCE = "sub_sequence"
    CRIT_G = "crit_G"
    CRIT_T = "crit_T"
    CRIT_SEQUENCE = "crit_sequence"


class Subcommand(str, enum.Enum):
    """CLI subcommands."""
    SIMULATE = "simulate"
    ORACLE = "oracle"
    VARIANCE = "variance"
    CLT = "clt"
    SUPERCRITICAL = "supercritical"
    REGIMES = "regimes"
