"""
Domain models: tree indexing, observables and Markov kernels.
Exports all models for easy access.
"""

# Enums
from app.models.enums import (
    InitialLaw,
    MomentKind,
    Regime,
    Statistic,
    Subcommand,
    TailMode,
    VarianceKind,
)

# Tree indexing
from app.models.tree import NodeId, generation_size, tree_size

# Observables
from app.models.observables import HermiteBasis, Observable, ObservableSequence

# Kernels
from app.models.kernels import BarKernel, GaussianLaw, KernelInterface, classify_regime

__all__ = [
    "InitialLaw",
    "MomentKind",
    "Regime",
    "Statistic",
    "Subcommand",
    "TailMode",
    "VarianceKind",
    "NodeId",
    "generation_size",
    "tree_size",
    "HermiteBasis",
    "Observable",
    "ObservableSequence",
    "BarKernel",
    "GaussianLaw",
    "KernelInterface",
    "classify_regime",
]
