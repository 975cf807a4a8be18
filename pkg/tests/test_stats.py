"""
Tests for the CLT checks.
"""

import math

import numpy as np
import pytest
from scipy import stats

from app.core.exceptions import DegenerateDiagnosticError, InsufficientSamplesError, RegimeError
from app.models.enums import InitialLaw, Regime, Statistic
from app.services.hermite_service import hermite_service
from app.services.simulation_service import SimulationConfig
from app.services.stat_service import (
    CltTolerances,
    empirical_summary,
    ks_critical_constant,
    ks_normality,
    stat_service,
)

# deterministic "perfectly normal" samples
NORMAL_QUANTILES = stats.norm.ppf((np.arange(500) + 0.5) / 500)


class TestEmpirical:

    def test_summary(self):
        summary = empirical_summary([1.0, 2.0, 3.0, 4.0])
        assert summary.mean == 2.5
        assert summary.variance == pytest.approx(5.0 / 3.0)
        assert summary.stderr > 0.0

    def test_summary_needs_two_samples(self):
        with pytest.raises(InsufficientSamplesError):
            empirical_summary([1.0])


class TestKolmogorovSmirnov:

    def test_critical_constant(self):
        assert ks_critical_constant(0.01) == pytest.approx(1.6276, abs=1e-3)
        with pytest.raises(ValueError):
            ks_critical_constant(1.5)

    def test_normal_samples_pass(self):
        statistic, passed = ks_normality(NORMAL_QUANTILES, 1.0)
        assert passed
        assert statistic < 0.01

    def test_wrong_scale_fails(self):
        _, passed = ks_normality(3.0 * NORMAL_QUANTILES, 1.0)
        assert not passed

    def test_degenerate_target(self):
        assert ks_normality(np.zeros(200), 0.0) == (0.0, True)
        with pytest.raises(DegenerateDiagnosticError):
            ks_normality(NORMAL_QUANTILES, 0.0)

    def test_too_few_samples(self):
        with pytest.raises(InsufficientSamplesError):
            ks_normality(np.zeros(10), 1.0)


class TestScales:

    def test_subcritical(self):
        assert stat_service.scale(Regime.SUBCRITICAL, Statistic.GENERATION, 4) == 0.25

    def test_critical(self):
        assert stat_service.scale(Regime.CRITICAL, Statistic.GENERATION, 4) == pytest.approx(0.125)
        with pytest.raises(ValueError):
            stat_service.scale(Regime.CRITICAL, Statistic.GENERATION, 0)

    def test_supercritical(self):
        with pytest.raises(RegimeError):
            stat_service.scale(Regime.SUPERCRITICAL, Statistic.TREE, 4)

    def test_tolerances(self):
        tol = CltTolerances()
        assert tol.relative(Regime.SUBCRITICAL) == 0.08
        assert tol.relative(Regime.CRITICAL) == 0.15


class TestExactVariance:

    def test_stationary_critical(self, crit_kernel, identity):
        n = 14
        config = SimulationConfig(kernel=crit_kernel, depth=n, replicates=1)
        scale = stat_service.scale(Regime.CRITICAL, Statistic.GENERATION, n)
        exact = scale ** 2 * stat_service.exact_variance(config, identity(crit_kernel), Statistic.GENERATION)
        assert exact == pytest.approx((n + 2) / n)

    @pytest.mark.parametrize("n", [5, 14, 20])
    def test_critical_point_start_at_zero(self, crit_kernel, identity, n):
        # from x0 = 0 the scaled generation variance equals its limit at every n
        config = SimulationConfig(kernel=crit_kernel, depth=n, replicates=1, initial=InitialLaw.POINT, x0=0.0)
        scale = stat_service.scale(Regime.CRITICAL, Statistic.GENERATION, n)
        exact = scale ** 2 * stat_service.exact_variance(config, identity(crit_kernel), Statistic.GENERATION)
        assert exact == pytest.approx(1.0, rel=1e-10)

    def test_critical_tree_variance_approaches_limit(self, crit_kernel, identity):
        limit = 3.0 + 2.0 * math.sqrt(2.0)
        f = identity(crit_kernel)
        config = SimulationConfig(kernel=crit_kernel, depth=32, replicates=1)
        scaled = {}
        for n in (14, 16, 32):
            scale = stat_service.scale(Regime.CRITICAL, Statistic.TREE, n)
            scaled[n] = scale ** 2 * stat_service.exact_variance(config, f, Statistic.TREE, n=n)
        # the O(1/n) bias keeps n = 14 outside a 15% band around the limit
        assert abs(scaled[14] - limit) > 0.1 * limit
        assert abs(scaled[32] - limit) < 0.15 * limit
        assert abs(scaled[32] - limit) < abs(scaled[16] - limit)
        assert scaled[14] < scaled[16] < scaled[32] < limit

    def test_point_start(self, sub_kernel, identity):
        # Var_x M_{G_1}(x) = 2 sigma^2 whatever x
        config = SimulationConfig(kernel=sub_kernel, depth=1, replicates=1, initial=InitialLaw.POINT, x0=3.0)
        variance = stat_service.exact_variance(config, identity(sub_kernel), Statistic.GENERATION)
        assert variance == pytest.approx(2.0)


class TestCltVerdict:

    def test_subcritical_generation(self, sub_kernel, identity):
        config = SimulationConfig(kernel=sub_kernel, depth=8, replicates=400, master_seed=2024, threads=2)
        verdict = stat_service.clt_verdict(config, identity(sub_kernel), Regime.SUBCRITICAL)
        assert verdict.target_variance_asymptotic == pytest.approx(2.0, abs=1e-10)
        assert verdict.target_variance_exact_n == pytest.approx(2.0 * (1.0 - 0.5 ** 8 / 3.0))
        assert verdict.replicates == 400
        assert verdict.pass_exact

    def test_tree_statistic_targets(self, sub_kernel, identity):
        config = SimulationConfig(kernel=sub_kernel, depth=6, replicates=200, master_seed=1)
        verdict = stat_service.clt_verdict(config, identity(sub_kernel), "sub", Statistic.TREE)
        assert verdict.statistic is Statistic.TREE
        assert verdict.target_variance_asymptotic == pytest.approx(6.0, abs=1e-10)

    def test_zero_asymptotic_variance(self, crit_kernel):
        f = hermite_service.preset("square-centered", crit_kernel)
        config = SimulationConfig(kernel=crit_kernel, depth=6, replicates=200, master_seed=3)
        verdict = stat_service.clt_verdict(config, f, Regime.CRITICAL)
        assert verdict.target_variance_asymptotic == pytest.approx(0.0, abs=1e-14)
        assert verdict.pass_asymptotic == (verdict.empirical_variance <= verdict.tolerances.zero_variance_ceiling)

    def test_regime_mismatch(self, sub_kernel, identity):
        config = SimulationConfig(kernel=sub_kernel, depth=4, replicates=200)
        with pytest.raises(RegimeError):
            stat_service.clt_verdict(config, identity(sub_kernel), Regime.CRITICAL)

    def test_supercritical_refused(self, super_kernel, identity):
        config = SimulationConfig(kernel=super_kernel, depth=4, replicates=200)
        with pytest.raises(RegimeError):
            stat_service.clt_verdict(config, identity(super_kernel), Regime.SUPERCRITICAL)

    @pytest.mark.slow
    def test_critical_generation(self, crit_kernel, identity):
        config = SimulationConfig(kernel=crit_kernel, depth=12, replicates=1000, master_seed=7, threads=4)
        verdict = stat_service.clt_verdict(config, identity(crit_kernel), Regime.CRITICAL)
        assert verdict.target_variance_exact_n == pytest.approx(14.0 / 12.0)
        assert verdict.target_variance_asymptotic == pytest.approx(1.0)
        assert verdict.pass_exact


class TestCriticalVarianceProfile:
    """g_2 has no first Hermite component: its critical-scale variance decays like 1/n."""

    @staticmethod
    def exact(d: int) -> float:
        # 2^d (1 + sum_k 2^{k-1} a^{4k}) / (d 2^d) with a^4 = 1/4
        return (1.5 - 2.0 ** (-d - 1)) / d

    def test_exact_targets(self, crit_kernel):
        g2 = hermite_service.basis_function(2, crit_kernel)
        config = SimulationConfig(kernel=crit_kernel, depth=32, replicates=1)
        for d in (5, 10, 14, 32):
            scale = stat_service.scale(Regime.CRITICAL, Statistic.GENERATION, d)
            exact = scale ** 2 * stat_service.exact_variance(config, g2, Statistic.GENERATION, n=d)
            assert exact == pytest.approx(self.exact(d), rel=1e-10)
        # the 0.05 ceiling on the limit is only within reach from n = 30 on
        assert self.exact(14) > 0.1
        assert self.exact(29) > 0.05 > self.exact(31)

    def test_decays_with_depth(self, crit_kernel):
        g2 = hermite_service.basis_function(2, crit_kernel)
        config = SimulationConfig(kernel=crit_kernel, depth=10, replicates=1000, master_seed=31, threads=2)
        profile = stat_service.critical_variance_profile(config, g2, [10, 5, 7])
        assert [p.depth for p in profile] == [5, 7, 10]
        for p in profile:
            assert p.target_variance_exact == pytest.approx(self.exact(p.depth), rel=1e-10)
            assert p.passed
        values = [p.empirical_variance for p in profile]
        assert values[0] > values[1] > values[2]

    def test_requires_critical_kernel(self, sub_kernel):
        config = SimulationConfig(kernel=sub_kernel, depth=6, replicates=10)
        with pytest.raises(RegimeError):
            stat_service.critical_variance_profile(config, hermite_service.basis_function(2, sub_kernel), [3, 6])

    def test_depths_within_run(self, crit_kernel):
        config = SimulationConfig(kernel=crit_kernel, depth=6, replicates=10)
        g2 = hermite_service.basis_function(2, crit_kernel)
        with pytest.raises(ValueError):
            stat_service.critical_variance_profile(config, g2, [3, 7])
        with pytest.raises(ValueError):
            stat_service.critical_variance_profile(config, g2, [0, 3])
