"""
Ensemble statistics turning the central limit theorems into pass/fail checks.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from loguru import logger
from scipy import special, stats

from app.core.exceptions import (
    DegenerateDiagnosticError,
    InsufficientSamplesError,
    RegimeError,
)
from app.models.enums import InitialLaw, Regime, Statistic
from app.models.kernels import BarKernel
from app.models.observables import Observable
from app.models.tree import generation_size, tree_size
from app.services.hermite_service import hermite_service
from app.services.oracle_service import oracle_service
from app.services.simulation_service import (
    EnsembleAccumulator,
    SimulationConfig,
    simulation_service,
)
from app.services.variance_service import variance_service

MIN_KS_SAMPLES = 100


class EmpiricalSummary(NamedTuple):
    mean: float
    variance: float
    stderr: float


@dataclass(frozen=True)
class CltTolerances:
    """Acceptance thresholds of a CLT check."""
    n_stderr: float = 4.0
    relative_sub: float = 0.08
    relative_critical: float = 0.15
    zero_variance_ceiling: float = 0.05
    ks_level: float = 0.01

    def relative(self, regime: Regime) -> float:
        return self.relative_sub if regime is Regime.SUBCRITICAL else self.relative_critical


@dataclass
class CltVerdict:
    """Empirical variance of a normalised statistic against its two targets."""
    regime: Regime
    statistic: Statistic
    n: int
    replicates: int
    empirical_variance: float
    empirical_stderr: float
    target_variance_exact_n: float
    target_variance_asymptotic: float
    ks_statistic: float
    pass_exact: bool
    pass_asymptotic: bool
    pass_normality: bool
    tolerances: CltTolerances = field(default_factory=CltTolerances)

    @property
    def passed(self) -> bool:
        return self.pass_exact and self.pass_asymptotic and self.pass_normality


@dataclass
class ScaledVariance:
    """Critical-scale variance of M_{G_d}(f~) at one depth d."""
    depth: int
    empirical_variance: float
    empirical_stderr: float
    target_variance_exact: float
    passed: bool


def empirical_summary(samples) -> EmpiricalSummary:
    """
    (mean, unbiased variance, standard error of the variance), the last one
    from the fourth central moment.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    n = x.size
    if n < 2:
        raise InsufficientSamplesError(f"Need at least 2 samples, got {n}")
    mean = float(np.mean(x))
    variance = float(np.var(x, ddof=1))
    centered = x - mean
    m4 = float(np.mean(centered ** 4))
    var_of_var = (m4 - (n - 3) / (n - 1) * variance ** 2) / n
    return EmpiricalSummary(mean, variance, math.sqrt(max(var_of_var, 0.0)))


def ks_critical_constant(level: float = 0.01) -> float:
    """Asymptotic Kolmogorov quantile c with P(sqrt(R) D > c) = level."""
    if not 0.0 < level < 1.0:
        raise ValueError("Level must lie in (0, 1)")
    return float(special.kolmogi(level))


def ks_normality(samples, sigma: float, level: float = 0.01) -> tuple[float, bool]:
    """One-sample Kolmogorov-Smirnov statistic against N(0, sigma^2)."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < MIN_KS_SAMPLES:
        raise InsufficientSamplesError(f"Need at least {MIN_KS_SAMPLES} samples, got {x.size}")
    if sigma < 0 or not math.isfinite(sigma):
        raise ValueError(f"sigma must be a finite non-negative number, got {sigma}")
    if sigma == 0.0:
        if np.all(x == 0.0):
            return 0.0, True
        raise DegenerateDiagnosticError("Degenerate target law but the samples vary")
    result = stats.kstest(x, stats.norm(loc=0.0, scale=sigma).cdf)
    statistic = float(result.statistic)
    return statistic, statistic < ks_critical_constant(level) / math.sqrt(x.size)


class StatService:
    """
    Service checking ensembles against the oracle and asymptotic variances.
    """

    def scale(self, regime: Regime, statistic: Statistic, n: int) -> float:
        """Normalisation of M_{G_n}(f~) or M_{T_n}(f~) in the Gaussian regimes."""
        size = generation_size(n) if statistic is Statistic.GENERATION else tree_size(n)
        if regime is Regime.SUBCRITICAL:
            return size ** -0.5
        if regime is Regime.CRITICAL:
            if n < 1:
                raise ValueError("The critical normalisation needs n >= 1")
            return (n * size) ** -0.5
        raise RegimeError("No Gaussian normalisation in the super-critical regime")

    def exact_variance(
        self,
        config: SimulationConfig,
        f: Observable,
        statistic: Statistic,
        n: Optional[int] = None,
    ) -> float:
        """Finite-n variance of M_{G_n}(f~) or M_{T_n}(f~) under the configured start; n defaults to the depth."""
        kernel = config.kernel
        n = config.depth if n is None else n
        if config.initial is InitialLaw.STATIONARY:
            return oracle_service.stationary_variance(f, n, kernel, statistic)
        f_tilde = hermite_service.center(f)
        x = config.x0
        if statistic is Statistic.GENERATION:
            mean = oracle_service.mean_generation(f_tilde, n, x, kernel)
            second = oracle_service.second_moment_generation(f_tilde, n, x, kernel)
        else:
            mean = oracle_service.mean_tree(f_tilde, n, x, kernel)
            second = oracle_service.tree_second_moment(f_tilde, n, x, kernel)
        return second - mean * mean

    def clt_verdict(
        self,
        config: SimulationConfig,
        f: Observable,
        regime: Regime,
        statistic: Statistic = Statistic.GENERATION,
        tolerances: Optional[CltTolerances] = None,
        ensemble: Optional[EnsembleAccumulator] = None,
        index: int = 0,
    ) -> CltVerdict:
        kernel: BarKernel = config.kernel
        regime, statistic = Regime(regime), Statistic(statistic)
        tol = tolerances or CltTolerances()
        if kernel.regime is not regime:
            raise RegimeError(f"Requested the {regime.label} regime but the kernel is {kernel.regime.label}")
        if regime is Regime.SUPERCRITICAL:
            raise RegimeError("The super-critical regime has no Gaussian limit")

        n = config.depth
        scale = self.scale(regime, statistic, n)
        if ensemble is None:
            ensemble = simulation_service.run_replicates(config, [f])
        raw = ensemble.m_gen(index)[:, n] if statistic is Statistic.GENERATION else ensemble.m_tree(index)
        samples = scale * raw

        summary = empirical_summary(samples)
        exact = scale ** 2 * self.exact_variance(config, f, statistic)
        kind_g, kind_t = variance_service.default_kinds(regime)
        kind = kind_g if statistic is Statistic.GENERATION else kind_t
        asymptotic = variance_service.evaluate(kind, kernel, f=f).value

        pass_exact = abs(summary.variance - exact) <= tol.n_stderr * summary.stderr
        if abs(asymptotic) < 1e-14:
            pass_asymptotic = summary.variance <= tol.zero_variance_ceiling
        else:
            pass_asymptotic = abs(summary.variance - asymptotic) <= tol.relative(regime) * asymptotic
        ks_stat, pass_normality = ks_normality(samples, math.sqrt(max(exact, 0.0)), tol.ks_level)

        verdict = CltVerdict(
            regime=regime,
            statistic=statistic,
            n=n,
            replicates=len(samples),
            empirical_variance=summary.variance,
            empirical_stderr=summary.stderr,
            target_variance_exact_n=exact,
            target_variance_asymptotic=asymptotic,
            ks_statistic=ks_stat,
            pass_exact=bool(pass_exact),
            pass_asymptotic=bool(pass_asymptotic),
            pass_normality=bool(pass_normality),
            tolerances=tol,
        )
        logger.info(
            f"CLT {regime.value}/{statistic.value} n={n}: variance {summary.variance:.4f} "
            f"(exact {exact:.4f}, asymptotic {asymptotic:.4f}), KS {ks_stat:.4f}"
        )
        return verdict

    def critical_variance_profile(
        self,
        config: SimulationConfig,
        f: Observable,
        depths,
        tolerances: Optional[CltTolerances] = None,
        ensemble: Optional[EnsembleAccumulator] = None,
        index: int = 0,
    ) -> list[ScaledVariance]:
        """
        Variance of (d 2^d)^{-1/2} M_{G_d}(f~) at each requested depth d.

        For f without a first Hermite component the limit is zero and the
        profile decays like 1/d, so a fixed ceiling is only reached at large
        depth. Each depth is checked against its own finite-d oracle value.
        """
        kernel: BarKernel = config.kernel
        if kernel.regime is not Regime.CRITICAL:
            raise RegimeError(f"The critical profile needs 2a^2 = 1, the kernel is {kernel.regime.label}")
        tol = tolerances or CltTolerances()
        depths = sorted(set(int(d) for d in depths))
        if not depths or depths[0] < 1 or depths[-1] > config.depth:
            raise ValueError(f"Depths must lie in [1, {config.depth}], got {depths}")
        if ensemble is None:
            ensemble = simulation_service.run_replicates(config, [f])
            index = 0
        m_gen = ensemble.m_gen(index)

        profile = []
        for d in depths:
            scale = self.scale(Regime.CRITICAL, Statistic.GENERATION, d)
            summary = empirical_summary(scale * m_gen[:, d])
            exact = scale ** 2 * self.exact_variance(config, f, Statistic.GENERATION, n=d)
            profile.append(ScaledVariance(
                depth=d,
                empirical_variance=summary.variance,
                empirical_stderr=summary.stderr,
                target_variance_exact=exact,
                passed=bool(abs(summary.variance - exact) <= tol.n_stderr * summary.stderr),
            ))
        logger.info(
            "Critical variance profile: "
            + ", ".join(f"d={p.depth} {p.empirical_variance:.4f} (exact {p.target_variance_exact:.4f})" for p in profile)
        )
        return profile


# Singleton instance
stat_service = StatService()
