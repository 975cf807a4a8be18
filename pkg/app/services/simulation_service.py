"""
Level-streaming simulation of a bifurcating Markov chain.

A replicate only keeps the current generation alive. For each generation the
power sums S_m = sum_i g_m(X_i) of the Hermite basis are computed once; every
additive functional tracked by the laboratory (centered and raw generation
sums, sequence entries, projections R f) is a linear combination of them.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from loguru import logger

from app.core.config import settings
from app.core.exceptions import (
    BasisMismatchError,
    BudgetExceededError,
    MemoryBudgetError,
)
from app.models.enums import InitialLaw
from app.models.kernels import BarKernel, KernelInterface, sample_generation
from app.models.observables import (
    HermiteBasis,
    Observable,
    ObservableSequence,
    require_same_basis,
    stack_coefficients,
)
from app.models.tree import check_depth, generation_size, tree_size
from app.services.hermite_service import hermite_service


def replicate_rng(master_seed: int, replicate: int) -> np.random.Generator:
    """Philox stream keyed by (master_seed, replicate), independent of scheduling."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(replicate,))
    return np.random.Generator(np.random.Philox(seq))


class KahanSum:
    """Compensated running sum."""

    __slots__ = ("total", "_compensation")

    def __init__(self, values: Iterable[float] = ()):
        self.total = 0.0
        self._compensation = 0.0
        for v in values:
            self.add(v)

    def add(self, value: float) -> "KahanSum":
        y = float(value) - self._compensation
        t = self.total + y
        self._compensation = (t - self.total) - y
        self.total = t
        return self

    def __float__(self) -> float:
        return self.total


def _linear_sums(power_sums: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """out[i, g] = sum_m coeffs[i, m] S_m(g), correctly rounded."""
    out = np.empty((coeffs.shape[0], power_sums.shape[0]))
    for i, c in enumerate(coeffs):
        for g, row in enumerate(power_sums):
            out[i, g] = math.fsum(row * c)
    return out


@dataclass(frozen=True)
class SimulationConfig:
    """Kernel, depth n, replicates R, initial law and master seed of a run."""
    kernel: KernelInterface
    depth: int
    replicates: int
    initial: InitialLaw = InitialLaw.STATIONARY
    x0: float = 0.0
    master_seed: int = 0
    threads: int = 1
    runtime_budget: Optional[float] = None

    def __post_init__(self):
        check_depth(self.depth)
        if self.replicates < 1:
            raise ValueError("At least one replicate is required")
        if self.threads < 1:
            raise ValueError("At least one worker thread is required")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "initial", InitialLaw(self.initial))

    @property
    def budget_seconds(self) -> float:
        return settings.RUNTIME_BUDGET_SECONDS if self.runtime_budget is None else self.runtime_budget


@dataclass(frozen=True, eq=False)
class FunctionalLayout:
    """
    Coefficient rows turning basis power sums into the tracked functionals.
    Shared read-only by every replicate of a run.
    """
    basis: HermiteBasis
    degree: int
    names: tuple[str, ...]
    centered: np.ndarray
    raw: np.ndarray
    projected: np.ndarray
    sequence: Optional[ObservableSequence]
    sequence_centered: Optional[np.ndarray]
    martingale_rate: Optional[float]

    @classmethod
    def build(
        cls,
        kernel: KernelInterface,
        observables: Sequence[Observable],
        sequence: Optional[ObservableSequence] = None,
    ) -> "FunctionalLayout":
        everything = list(observables) + (list(sequence.entries) if sequence is not None else [])
        if not everything:
            raise ValueError("Nothing to track: give at least one observable or a sequence")
        basis = require_same_basis(*everything)
        if isinstance(kernel, BarKernel) and not kernel.is_degenerate and not kernel.basis.same_as(basis):
            raise BasisMismatchError("Observables are expanded on another kernel's basis")
        degree = max(max(o.degree for o in everything), 1)

        def rows(obs: Sequence[Observable]) -> np.ndarray:
            if not obs:
                return np.zeros((0, degree + 1))
            return stack_coefficients(obs, degree)

        observables = list(observables)
        return cls(
            basis=basis,
            degree=degree,
            names=tuple(o.name or f"f{i}" for i, o in enumerate(observables)),
            centered=rows([hermite_service.center(o) for o in observables]),
            raw=rows(observables),
            projected=rows([hermite_service.project_R(o) for o in observables]),
            sequence=sequence,
            sequence_centered=(
                rows([hermite_service.center(e) for e in sequence.entries]) if sequence is not None else None
            ),
            martingale_rate=2.0 * kernel.a if isinstance(kernel, BarKernel) else None,
        )

    def statistics(self, replicate: int, root_state: float, power_sums: np.ndarray) -> "ReplicateStatistics":
        depth = power_sums.shape[0] - 1
        track = None
        if self.martingale_rate is not None:
            scale = self.martingale_rate ** -np.arange(depth + 1, dtype=float)
            track = _linear_sums(power_sums, self.projected) * scale
        return ReplicateStatistics(
            replicate=replicate,
            depth=depth,
            root_state=root_state,
            m_gen=_linear_sums(power_sums, self.centered),
            raw_gen=_linear_sums(power_sums, self.raw),
            sequence_sums=(
                _linear_sums(power_sums, self.sequence_centered) if self.sequence is not None else None
            ),
            martingale_track=track,
            layout=self,
        )


@dataclass(eq=False)
class ReplicateStatistics:
    """Additive functionals of one simulated tree, generations 0..depth."""
    replicate: int
    depth: int
    root_state: float
    m_gen: np.ndarray
    raw_gen: np.ndarray
    sequence_sums: Optional[np.ndarray]
    martingale_track: Optional[np.ndarray]
    layout: FunctionalLayout = field(repr=False)

    @property
    def m_tree(self) -> np.ndarray:
        """M_{T_n}(f~) per observable."""
        return np.array([KahanSum(row).total for row in self.m_gen])

    def tree_sum_at(self, t: int, index: int = 0) -> float:
        """M_{T_t}(f~) for t <= depth."""
        return KahanSum(self.m_gen[index, : t + 1]).total

    @property
    def n_functional(self) -> Optional[float]:
        if self.sequence_sums is None:
            return None
        return n_functional_at(self, self.depth)


def n_functional_at(stats: ReplicateStatistics, t: int) -> float:
    """N_{t,root}(f) = |G_t|^(-1/2) sum_{l<=t} M_{G_(t-l)}(f~_l), any t <= depth."""
    seq = stats.layout.sequence
    if seq is None or stats.sequence_sums is None:
        raise ValueError("No observable sequence was tracked")
    if not 0 <= t <= stats.depth:
        raise ValueError(f"Depth {t} outside the simulated range 0..{stats.depth}")
    acc = KahanSum()
    for g in range(t + 1):
        entry = seq.entry_index(t - g)
        if entry is not None:
            acc.add(stats.sequence_sums[entry, g])
    return generation_size(t) ** -0.5 * acc.total


def n_functional_identity_check(stats: ReplicateStatistics, n: int) -> bool:
    """
    For a constant sequence (f, f, ...):
    N_{n,root} = sqrt(2 - 2^-n) |T_n|^(-1/2) M_{T_n}(f~).
    """
    seq = stats.layout.sequence
    if seq is None or not seq.is_constant:
        raise ValueError("The identity needs a constant observable sequence")
    lhs = n_functional_at(stats, n)
    tree = KahanSum(stats.sequence_sums[0, : n + 1]).total
    rhs = math.sqrt(2.0 - 2.0 ** -n) * tree_size(n) ** -0.5 * tree
    return math.isclose(lhs, rhs, rel_tol=1e-12, abs_tol=1e-12)


class EnsembleAccumulator:
    """
    Replicate records keyed by replicate index. Merging is a union, so the
    order of merges never changes a summary; summaries read records in
    replicate order.
    """

    def __init__(self, layout: FunctionalLayout, records: Iterable[ReplicateStatistics] = ()):
        self.layout = layout
        self._records: dict[int, ReplicateStatistics] = {}
        for r in records:
            self.add(r)

    def add(self, stats: ReplicateStatistics) -> None:
        if stats.replicate in self._records:
            raise ValueError(f"Replicate {stats.replicate} recorded twice")
        self._records[stats.replicate] = stats

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        if other.layout is not self.layout:
            raise ValueError("Cannot merge ensembles tracking different functionals")
        merged = EnsembleAccumulator(self.layout, self._records.values())
        for r in other._records.values():
            merged.add(r)
        return merged

    def __len__(self) -> int:
        return len(self._records)

    @property
    def replicates(self) -> list[ReplicateStatistics]:
        return [self._records[k] for k in sorted(self._records)]

    @property
    def depth(self) -> int:
        return self.replicates[0].depth

    def m_gen(self, index: int = 0) -> np.ndarray:
        """(R, depth + 1) centered generation sums of one observable."""
        return np.vstack([r.m_gen[index] for r in self.replicates])

    def raw_gen(self, index: int = 0) -> np.ndarray:
        return np.vstack([r.raw_gen[index] for r in self.replicates])

    def m_tree(self, index: int = 0, t: Optional[int] = None) -> np.ndarray:
        return np.array([r.tree_sum_at(r.depth if t is None else t, index) for r in self.replicates])

    def n_functional(self, t: Optional[int] = None) -> np.ndarray:
        return np.array([n_functional_at(r, r.depth if t is None else t) for r in self.replicates])

    def martingale(self, index: int = 0) -> np.ndarray:
        """(R, depth + 1) values of (2a)^-l M_{G_l}(R f)."""
        if self.layout.martingale_rate is None:
            raise ValueError("Martingale tracks need a BAR kernel")
        return np.vstack([r.martingale_track[index] for r in self.replicates])

    def root_states(self) -> np.ndarray:
        return np.array([r.root_state for r in self.replicates])


class SimulationService:
    """
    Service running replicate ensembles in a thread pool.
    """

    def estimate_memory(self, config: SimulationConfig, degree: int = 2, tracked_rows: int = 4) -> int:
        """Bytes: live generations and basis evaluations per worker plus the records."""
        width = 2 ** config.depth
        per_worker = 8 * width * (2 * (degree + 1) + 4)
        records = 8 * config.replicates * (config.depth + 1) * tracked_rows
        return per_worker * config.threads + records

    def check_memory(self, config: SimulationConfig, degree: int, tracked_rows: int) -> None:
        needed = self.estimate_memory(config, degree, tracked_rows)
        budget = settings.MEMORY_BUDGET_MB * 1024 * 1024
        if needed > budget:
            raise MemoryBudgetError(
                f"Estimated {needed / 2**20:.0f} MB exceeds the budget of {settings.MEMORY_BUDGET_MB} MB",
                detail=f"depth={config.depth}, replicates={config.replicates}, threads={config.threads}",
            )

    def _initial_state(self, config: SimulationConfig, rng: np.random.Generator) -> float:
        kernel = config.kernel
        if hasattr(kernel, "sample_initial"):
            return kernel.sample_initial(config.initial, config.x0, rng)
        if config.initial is not InitialLaw.POINT:
            raise ValueError("Generic kernels only support a point-mass initial state")
        return float(config.x0)

    def simulate_replicate(
        self,
        config: SimulationConfig,
        layout: FunctionalLayout,
        replicate: int,
    ) -> ReplicateStatistics:
        rng = replicate_rng(config.master_seed, replicate)
        root = self._initial_state(config, rng)
        states = np.array([root])
        power_sums = np.empty((config.depth + 1, layout.degree + 1))
        for g in range(config.depth + 1):
            if g:
                states = sample_generation(config.kernel, states, rng)
            values = np.ascontiguousarray(layout.basis.vander(states, layout.degree).T)
            # numpy reduces contiguous rows pairwise: O(log 2^g) error growth, the
            # Kahan bound up to a log factor, at vectorised speed. Generation
            # totals are then combined with KahanSum.
            power_sums[g] = values.sum(axis=1)
        return layout.statistics(replicate, root, power_sums)

    def _run_chunk(
        self,
        config: SimulationConfig,
        layout: FunctionalLayout,
        indices: range,
        deadline: float,
    ) -> list[ReplicateStatistics]:
        out = []
        for r in indices:
            if time.monotonic() > deadline:
                break
            out.append(self.simulate_replicate(config, layout, r))
        logger.debug(f"Chunk {indices.start}-{indices.stop - 1}: {len(out)} replicates")
        return out

    def run_replicates(
        self,
        config: SimulationConfig,
        observables: Sequence[Observable],
        sequence: Optional[ObservableSequence] = None,
    ) -> EnsembleAccumulator:
        """
        R independent replicates. Results only depend on (config, master_seed),
        never on the number of threads.
        """
        layout = FunctionalLayout.build(config.kernel, observables, sequence)
        rows = 3 * layout.centered.shape[0] + (
            layout.sequence_centered.shape[0] if layout.sequence_centered is not None else 0
        )
        self.check_memory(config, layout.degree, rows)

        start = time.monotonic()
        deadline = start + config.budget_seconds
        n_chunks = min(config.replicates, 4 * config.threads)
        bounds = np.linspace(0, config.replicates, n_chunks + 1).astype(int)
        chunks = [range(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

        logger.info(
            f"Simulating R={config.replicates} trees of depth {config.depth} "
            f"on {config.threads} thread(s), seed={config.master_seed}"
        )
        ensemble = EnsembleAccumulator(layout)
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            futures = [pool.submit(self._run_chunk, config, layout, c, deadline) for c in chunks]
            for fut in futures:
                for stats in fut.result():
                    ensemble.add(stats)

        elapsed = time.monotonic() - start
        if len(ensemble) < config.replicates:
            logger.error(
                f"Runtime budget of {config.budget_seconds:.0f}s exceeded: "
                f"{len(ensemble)}/{config.replicates} replicates"
            )
            raise BudgetExceededError(
                "Runtime budget exceeded",
                completed=len(ensemble),
                partial=ensemble,
            )
        logger.info(f"Simulation done in {elapsed:.2f}s")
        return ensemble


# Singleton instance
simulation_service = SimulationService()
