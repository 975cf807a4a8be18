"""
Super-critical regime: the martingale (2a)^-n M_{G_n}(R f), its limit and
the convergence diagnostics built on it.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from loguru import logger
from scipy import stats

from app.core.exceptions import DegenerateDiagnosticError, RegimeError
from app.models.enums import Regime, TailMode
from app.models.kernels import BarKernel
from app.models.observables import Observable, ObservableSequence
from app.services.hermite_service import hermite_service
from app.services.oracle_service import oracle_service
from app.services.simulation_service import (
    EnsembleAccumulator,
    KahanSum,
    SimulationConfig,
    n_functional_at,
    simulation_service,
)

DENOMINATOR_FLOOR = 1e-3


@dataclass
class MartingaleTracks:
    """values[r, n] = (2a)^-n M_{G_n}(R f) of replicate r."""
    values: np.ndarray

    @property
    def final_value(self) -> np.ndarray:
        """Deepest value, the estimator of M_infinity(f)."""
        return self.values[:, -1]

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def stderr(self) -> np.ndarray:
        return self.values.std(axis=0, ddof=1) / np.sqrt(self.values.shape[0])

    def second_moment(self) -> np.ndarray:
        return np.mean(self.values ** 2, axis=0)


@dataclass
class SlopeTest:
    """OLS regression of M_n on M_(n-1)."""
    n: int
    slope: float
    stderr: float
    passed: bool


@dataclass
class RatioSummary:
    """Distribution of M_{T_n}(f~) / M_{G_n}(f~) across replicates."""
    median: float
    lower: float
    upper: float
    target: float
    used: int
    excluded: int
    ratios: np.ndarray = field(repr=False)


@dataclass
class ResidualSummary:
    """Spread of the normalised-functional residual at two depths n1 < n2."""
    n1: int
    n2: int
    iqr_n1: float
    iqr_n2: float
    residuals_n1: np.ndarray = field(repr=False)
    residuals_n2: np.ndarray = field(repr=False)

    @property
    def shrinking(self) -> bool:
        return self.iqr_n2 < self.iqr_n1


def interquartile_range(values: np.ndarray) -> float:
    q1, q3 = np.percentile(values, [25.0, 75.0])
    return float(q3 - q1)


class SupercriticalService:
    """
    Service for the martingale diagnostics of the super-critical regime.
    """

    def _require(self, kernel: BarKernel) -> None:
        if not isinstance(kernel, BarKernel):
            raise TypeError("Super-critical diagnostics need a BAR kernel")
        if kernel.regime is not Regime.SUPERCRITICAL:
            raise RegimeError(
                f"Kernel a={kernel.a} is {kernel.regime.label}, diagnostics need 2a^2 > 1"
            )

    def _simulate(self, config: SimulationConfig, f: Observable) -> EnsembleAccumulator:
        return simulation_service.run_replicates(config, [f])

    # ----------------------------------------------------------------
    # Martingale
    # ----------------------------------------------------------------

    def track_martingale(
        self,
        config: SimulationConfig,
        f: Observable,
        ensemble: Optional[EnsembleAccumulator] = None,
        index: int = 0,
    ) -> MartingaleTracks:
        self._require(config.kernel)
        if ensemble is None:
            ensemble = self._simulate(config, f)
        return MartingaleTracks(ensemble.martingale(index))

    def martingale_second_moment(self, f: Observable, n: int, x, kernel: BarKernel):
        """E_x[M_n^2] = (2a)^(-2n) E_x[M_{G_n}(R f)^2]."""
        rf = hermite_service.project_R(f, kernel)
        return oracle_service.second_moment_generation(rf, n, x, kernel) / (2.0 * kernel.a) ** (2 * n)

    def martingale_slope_test(self, tracks: MartingaleTracks, n_stderr: float = 4.0) -> list[SlopeTest]:
        """
        Per-n OLS slope of M_n on M_(n-1); the martingale property makes it 1.
        Depths where M_(n-1) does not vary (point start, n = 1) are skipped.
        """
        out = []
        values = tracks.values
        for n in range(1, values.shape[1]):
            previous, current = values[:, n - 1], values[:, n]
            if np.ptp(previous) == 0.0:
                continue
            fit = stats.linregress(previous, current)
            passed = bool(abs(fit.slope - 1.0) <= n_stderr * fit.stderr)
            out.append(SlopeTest(n=n, slope=float(fit.slope), stderr=float(fit.stderr), passed=passed))
        failed = [t.n for t in out if not t.passed]
        if failed:
            logger.warning(f"Martingale slope test failed at n={failed}")
        return out

    # ----------------------------------------------------------------
    # Corollary diagnostics
    # ----------------------------------------------------------------

    def ratio_diagnostic(
        self,
        config: SimulationConfig,
        f: Observable,
        ensemble: Optional[EnsembleAccumulator] = None,
        index: int = 0,
    ) -> RatioSummary:
        """M_{T_n}(f~) / M_{G_n}(f~), target 2a / (2a - 1)."""
        kernel = config.kernel
        self._require(kernel)
        if kernel.a <= 0:
            raise RegimeError("The tree/generation ratio needs a > 0")
        if hermite_service.project_R(f).is_zero:
            raise DegenerateDiagnosticError("R f = 0: the limit vanishes and the ratio is undefined")
        if ensemble is None:
            ensemble = self._simulate(config, f)

        numerator = ensemble.m_tree(index)
        denominator = ensemble.m_gen(index)[:, -1]
        floor = DENOMINATOR_FLOOR * float(np.std(denominator))
        keep = np.abs(denominator) > floor
        if not np.any(keep):
            raise DegenerateDiagnosticError("Every denominator is below the floor")
        ratios = numerator[keep] / denominator[keep]
        lower, median, upper = np.percentile(ratios, [10.0, 50.0, 90.0])
        two_a = 2.0 * kernel.a
        summary = RatioSummary(
            median=float(median),
            lower=float(lower),
            upper=float(upper),
            target=two_a / (two_a - 1.0),
            used=int(keep.sum()),
            excluded=int((~keep).sum()),
            ratios=ratios,
        )
        logger.info(
            f"Tree/generation ratio: median {summary.median:.4f} (target {summary.target:.4f}), "
            f"{summary.excluded} replicate(s) below the floor"
        )
        return summary

    def cesaro_gap(
        self,
        ensemble: EnsembleAccumulator,
        kernel: BarKernel,
        index: int = 0,
    ) -> np.ndarray:
        """Median |(2a)^-n M_{T_n}(f~) - 2a/(2a-1) (2a)^-n M_{G_n}(f~)| for n = 0..depth."""
        self._require(kernel)
        two_a = 2.0 * kernel.a
        factor = two_a / (two_a - 1.0)
        m_gen = ensemble.m_gen(index)
        gaps = np.empty(ensemble.depth + 1)
        for n in range(ensemble.depth + 1):
            tree = ensemble.m_tree(index, n)
            gaps[n] = np.median(np.abs(two_a ** -n * tree - factor * two_a ** -n * m_gen[:, n]))
        return gaps

    # ----------------------------------------------------------------
    # Sequences
    # ----------------------------------------------------------------

    def _limit_sum(self, seq: ObservableSequence, limits: np.ndarray, t: int, kernel: BarKernel) -> np.ndarray:
        """sum_l (2a)^-l theta^(t-l) M_infinity(f_l), limits[e] per entry."""
        two_alpha = 2.0 * kernel.alpha
        theta = float(kernel.theta)
        total = np.zeros(limits.shape[1])
        last = seq.last_index
        explicit = range(last) if seq.tail is TailMode.CONSTANT else range(last + 1)
        for ell in explicit:
            total += two_alpha ** -ell * theta ** (t - ell) * limits[ell]
        if seq.tail is TailMode.CONSTANT:
            # geometric tail from l = last onwards
            weight = theta ** (t - last) * two_alpha ** -last / (1.0 - theta / two_alpha)
            total += weight * limits[last]
        return total

    def residuals_at(
        self,
        ensemble: EnsembleAccumulator,
        seq: ObservableSequence,
        t: int,
        kernel: BarKernel,
        offset: int = 0,
    ) -> np.ndarray:
        """
        (2a)^-t sum_l M_{G_(t-l)}(f~_l) minus its martingale limit, per replicate.
        The sequence entries are tracked as observables offset, offset + 1, ...
        """
        limits = np.vstack([ensemble.martingale(offset + e)[:, -1] for e in range(len(seq.entries))])
        normalised = np.array([
            (2.0 * kernel.alpha) ** -t * n_functional_at(r, t) * 2.0 ** (t / 2.0)
            for r in ensemble.replicates
        ])
        return normalised - self._limit_sum(seq, limits, t, kernel)

    def normalized_functional_residual(
        self,
        config: SimulationConfig,
        seq: ObservableSequence,
        n1: Optional[int] = None,
        ensemble: Optional[EnsembleAccumulator] = None,
        offset: int = 0,
        n2: Optional[int] = None,
    ) -> ResidualSummary:
        """
        Residual of (2a^2)^(-n/2) N_{n,root}(f) against its martingale limit,
        with the deepest martingale value standing for M_infinity. The spread
        is compared at n1 < n2 < depth; at the simulated depth itself the
        residual of (f, 0, ...) is zero by construction.
        """
        kernel = config.kernel
        self._require(kernel)
        if kernel.a <= 0:
            raise ValueError("The normalised residual is evaluated for a > 0 only")
        depth = config.depth
        n2 = depth - 2 if n2 is None else n2
        n1 = max(n2 - 6, 0) if n1 is None else n1
        if not 0 <= n1 < n2 < depth:
            raise ValueError(f"Need 0 <= n1 < n2 < depth, got n1={n1}, n2={n2}, depth={depth}")
        if ensemble is None:
            ensemble = simulation_service.run_replicates(config, list(seq.entries), seq)

        r1 = self.residuals_at(ensemble, seq, n1, kernel, offset)
        r2 = self.residuals_at(ensemble, seq, n2, kernel, offset)
        summary = ResidualSummary(n1, n2, interquartile_range(r1), interquartile_range(r2), r1, r2)
        logger.info(f"Residual IQR: {summary.iqr_n1:.4g} at n={n1}, {summary.iqr_n2:.4g} at n={n2}")
        return summary

    def tree_scaled(self, ensemble: EnsembleAccumulator, kernel: BarKernel, index: int = 0) -> np.ndarray:
        """(2a)^-n M_{T_n}(f~) at the simulated depth, per replicate."""
        n = ensemble.depth
        return np.array([KahanSum(r.m_gen[index]).total for r in ensemble.replicates]) * (2.0 * kernel.a) ** -n


# Singleton instance
supercritical_service = SupercriticalService()
