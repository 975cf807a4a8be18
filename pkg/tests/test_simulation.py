"""
Tests for the level-streaming simulator and the ensemble accumulator.
"""

import math

import numpy as np
import pytest

from app.core.config import settings
from app.core.exceptions import BasisMismatchError, BudgetExceededError, MemoryBudgetError
from app.models.enums import InitialLaw
from app.models.kernels import BarKernel
from app.models.observables import ObservableSequence
from app.services.hermite_service import hermite_service
from app.services.oracle_service import oracle_service
from app.services.simulation_service import (
    EnsembleAccumulator,
    FunctionalLayout,
    KahanSum,
    SimulationConfig,
    n_functional_at,
    n_functional_identity_check,
    replicate_rng,
    simulation_service,
)


class TestRandomStreams:

    def test_stream_depends_only_on_seed_and_replicate(self):
        a = replicate_rng(11, 3).standard_normal(5)
        b = replicate_rng(11, 3).standard_normal(5)
        c = replicate_rng(11, 4).standard_normal(5)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_kahan_sum(self):
        assert KahanSum([0.1] * 10).total == pytest.approx(1.0, abs=1e-15)
        assert float(KahanSum().add(2.0).add(3.0)) == 5.0


class TestConfig:

    def test_validation(self, sub_kernel):
        with pytest.raises(ValueError):
            SimulationConfig(kernel=sub_kernel, depth=3, replicates=0)
        with pytest.raises(ValueError):
            SimulationConfig(kernel=sub_kernel, depth=3, replicates=1, threads=0)

    def test_budget_default(self, sub_kernel):
        config = SimulationConfig(kernel=sub_kernel, depth=3, replicates=1)
        assert config.budget_seconds == settings.RUNTIME_BUDGET_SECONDS


class TestRunReplicates:

    def test_thread_count_does_not_change_results(self, sub_kernel, identity):
        f = identity(sub_kernel)
        results = []
        for threads in (1, 3):
            config = SimulationConfig(kernel=sub_kernel, depth=6, replicates=20, master_seed=5, threads=threads)
            results.append(simulation_service.run_replicates(config, [f]))
        np.testing.assert_array_equal(results[0].m_gen(), results[1].m_gen())
        np.testing.assert_array_equal(results[0].root_states(), results[1].root_states())

    def test_depth_zero(self, sub_kernel, identity):
        config = SimulationConfig(
            kernel=sub_kernel, depth=0, replicates=4, initial=InitialLaw.POINT, x0=1.5
        )
        ensemble = simulation_service.run_replicates(config, [identity(sub_kernel)])
        assert ensemble.raw_gen().shape == (4, 1)
        np.testing.assert_allclose(ensemble.raw_gen()[:, 0], 1.5)

    def test_degenerate_kernel_is_deterministic(self):
        kernel = BarKernel(a=0.5, sigma=0.0)
        f = hermite_service.preset("identity", BarKernel(a=0.5, sigma=1.0))
        config = SimulationConfig(kernel=kernel, depth=4, replicates=2, initial=InitialLaw.POINT, x0=1.0)
        ensemble = simulation_service.run_replicates(config, [f])
        # every node of generation g sits at a^g, so M_{G_g}(x) = (2a)^g = 1
        np.testing.assert_allclose(ensemble.raw_gen(), np.ones((2, 5)), rtol=1e-12)

    def test_mean_matches_oracle(self, sub_kernel, identity):
        f = identity(sub_kernel)
        config = SimulationConfig(
            kernel=sub_kernel, depth=5, replicates=400, initial=InitialLaw.POINT, x0=1.0, master_seed=1
        )
        samples = simulation_service.run_replicates(config, [f]).raw_gen()[:, 5]
        target = oracle_service.mean_generation(f, 5, 1.0, sub_kernel)
        stderr = samples.std(ddof=1) / math.sqrt(samples.size)
        assert abs(samples.mean() - target) < 4 * stderr

    def test_generic_kernel(self, sub_kernel, identity):
        class ShiftKernel:
            def sample_children(self, x, rng):
                return x + 1.0, x - 1.0

        f = identity(sub_kernel)
        config = SimulationConfig(kernel=ShiftKernel(), depth=3, replicates=2, initial=InitialLaw.POINT, x0=2.0)
        ensemble = simulation_service.run_replicates(config, [f])
        np.testing.assert_allclose(ensemble.raw_gen()[0], [2.0, 4.0, 8.0, 16.0], rtol=1e-12)
        with pytest.raises(ValueError):
            ensemble.martingale()

    def test_generation_sums_match_exact_summation(self, sub_kernel, identity):
        class SpreadKernel:
            def sample_children(self, x, rng):
                return x + 0.1, x + 1e8

        depth = 16
        config = SimulationConfig(kernel=SpreadKernel(), depth=depth, replicates=1, initial=InitialLaw.POINT, x0=0.3)
        raw = simulation_service.run_replicates(config, [identity(sub_kernel)]).raw_gen()[0]
        generation = np.array([0.3])
        for g in range(depth + 1):
            exact = math.fsum(generation)
            assert abs(raw[g] - exact) <= 1e-13 * abs(exact)
            generation = np.concatenate([generation + 0.1, generation + 1e8])

    def test_generic_kernel_needs_point_start(self, sub_kernel, identity):
        class ShiftKernel:
            def sample_children(self, x, rng):
                return x + 1.0, x - 1.0

        config = SimulationConfig(kernel=ShiftKernel(), depth=2, replicates=1)
        with pytest.raises(ValueError):
            simulation_service.run_replicates(config, [identity(sub_kernel)])

    def test_basis_mismatch(self, sub_kernel, super_kernel, identity):
        config = SimulationConfig(kernel=sub_kernel, depth=2, replicates=1)
        with pytest.raises(BasisMismatchError):
            simulation_service.run_replicates(config, [identity(super_kernel)])

    def test_runtime_budget(self, sub_kernel, identity):
        config = SimulationConfig(kernel=sub_kernel, depth=8, replicates=50, runtime_budget=1e-9)
        with pytest.raises(BudgetExceededError) as exc_info:
            simulation_service.run_replicates(config, [identity(sub_kernel)])
        assert exc_info.value.completed < 50
        assert exc_info.value.exit_code == 4

    def test_memory_budget(self, sub_kernel, identity, monkeypatch):
        monkeypatch.setattr(settings, "MEMORY_BUDGET_MB", 0)
        config = SimulationConfig(kernel=sub_kernel, depth=4, replicates=2)
        with pytest.raises(MemoryBudgetError):
            simulation_service.run_replicates(config, [identity(sub_kernel)])


class TestOracleAgreement:
    """Monte Carlo generation moments against the exact ones over a small grid."""

    DEPTH = 6

    @staticmethod
    def assert_close(samples: np.ndarray, target: float, k: float):
        stderr = samples.std(ddof=1) / math.sqrt(samples.size)
        assert abs(samples.mean() - target) <= k * stderr + 1e-12 * max(1.0, abs(target))

    @pytest.mark.parametrize("preset", ["identity", "square-centered", "hermite:3"])
    @pytest.mark.parametrize("a", [0.3, 0.5])
    @pytest.mark.parametrize("x0", [0.0, 1.0])
    def test_generation_moments(self, preset, a, x0):
        kernel = BarKernel(a=a, sigma=1.0)
        f = hermite_service.preset(preset, kernel)
        n = self.DEPTH
        config = SimulationConfig(
            kernel=kernel, depth=n, replicates=2000, initial=InitialLaw.POINT, x0=x0, master_seed=97, threads=2
        )
        raw = simulation_service.run_replicates(config, [f]).raw_gen()

        self.assert_close(raw[:, n], oracle_service.mean_generation(f, n, x0, kernel), 4.0)
        # squared sums have heavier tails
        self.assert_close(raw[:, n] ** 2, oracle_service.second_moment_generation(f, n, x0, kernel), 5.0)
        self.assert_close(raw[:, n] * raw[:, n - 2], oracle_service.cross_moment(f, f, n, n - 2, x0, kernel), 5.0)


class TestFunctionals:

    def test_tree_sum_is_sum_of_generations(self, sub_kernel, identity):
        config = SimulationConfig(kernel=sub_kernel, depth=5, replicates=3, master_seed=2)
        ensemble = simulation_service.run_replicates(config, [identity(sub_kernel)])
        np.testing.assert_allclose(ensemble.m_tree(), ensemble.m_gen().sum(axis=1), rtol=1e-12)

    def test_centered_and_raw(self, sub_kernel):
        f = hermite_service.preset("square", sub_kernel)
        config = SimulationConfig(kernel=sub_kernel, depth=3, replicates=2, master_seed=4)
        ensemble = simulation_service.run_replicates(config, [f])
        sizes = 2.0 ** np.arange(4)
        np.testing.assert_allclose(ensemble.raw_gen() - ensemble.m_gen(), np.tile(sizes * f.mean, (2, 1)))

    def test_constant_sequence_identity(self, sub_kernel, identity):
        seq = ObservableSequence.constant(identity(sub_kernel))
        config = SimulationConfig(kernel=sub_kernel, depth=7, replicates=10, master_seed=3)
        ensemble = simulation_service.run_replicates(config, [identity(sub_kernel)], seq)
        assert all(n_functional_identity_check(r, 7) for r in ensemble.replicates)
        assert ensemble.n_functional().shape == (10,)

    def test_identity_needs_constant_sequence(self, sub_kernel, identity):
        seq = ObservableSequence.single(identity(sub_kernel))
        config = SimulationConfig(kernel=sub_kernel, depth=3, replicates=1)
        record = simulation_service.run_replicates(config, [identity(sub_kernel)], seq).replicates[0]
        with pytest.raises(ValueError):
            n_functional_identity_check(record, 3)

    def test_single_entry_sequence_is_generation_sum(self, sub_kernel, identity):
        f = identity(sub_kernel)
        config = SimulationConfig(kernel=sub_kernel, depth=4, replicates=2, master_seed=8)
        ensemble = simulation_service.run_replicates(config, [f], ObservableSequence.single(f))
        for record in ensemble.replicates:
            for t in range(5):
                expected = 2.0 ** (-t / 2.0) * record.m_gen[0, t]
                assert n_functional_at(record, t) == pytest.approx(expected, rel=1e-12, abs=1e-14)
        with pytest.raises(ValueError):
            n_functional_at(ensemble.replicates[0], 5)


class TestEnsembleAccumulator:

    def _records(self, kernel, f, count):
        config = SimulationConfig(kernel=kernel, depth=3, replicates=count, master_seed=9)
        layout = FunctionalLayout.build(kernel, [f])
        return layout, [simulation_service.simulate_replicate(config, layout, r) for r in range(count)]

    def test_merge_is_order_independent(self, sub_kernel, identity):
        layout, records = self._records(sub_kernel, identity(sub_kernel), 6)
        first = EnsembleAccumulator(layout, records[:2])
        second = EnsembleAccumulator(layout, records[2:])
        left, right = first.merge(second), second.merge(first)
        assert len(left) == 6
        np.testing.assert_array_equal(left.m_gen(), right.m_gen())
        assert [r.replicate for r in left.replicates] == list(range(6))

    def test_duplicate_replicate(self, sub_kernel, identity):
        layout, records = self._records(sub_kernel, identity(sub_kernel), 2)
        ensemble = EnsembleAccumulator(layout, records)
        with pytest.raises(ValueError):
            ensemble.add(records[0])

    def test_merge_needs_same_layout(self, sub_kernel, identity):
        layout, records = self._records(sub_kernel, identity(sub_kernel), 2)
        other_layout, _ = self._records(sub_kernel, identity(sub_kernel), 1)
        with pytest.raises(ValueError):
            EnsembleAccumulator(layout, records).merge(EnsembleAccumulator(other_layout))

    def test_memory_estimate_grows_with_depth(self, sub_kernel):
        small = SimulationConfig(kernel=sub_kernel, depth=4, replicates=10)
        large = SimulationConfig(kernel=sub_kernel, depth=10, replicates=10)
        assert simulation_service.estimate_memory(large) > simulation_service.estimate_memory(small)
