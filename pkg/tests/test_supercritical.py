"""
Tests for the martingale diagnostics of the super-critical regime.
"""

import numpy as np
import pytest

from app.core.exceptions import DegenerateDiagnosticError, RegimeError
from app.models.enums import InitialLaw
from app.models.kernels import BarKernel
from app.models.observables import ObservableSequence
from app.services.hermite_service import hermite_service
from app.services.simulation_service import SimulationConfig, simulation_service
from app.services.supercritical_service import (
    MartingaleTracks,
    interquartile_range,
    supercritical_service,
)


@pytest.fixture
def point_config(super_kernel):
    return SimulationConfig(
        kernel=super_kernel, depth=10, replicates=100, initial=InitialLaw.POINT, x0=3.0, master_seed=17
    )


@pytest.fixture
def tracked(point_config, super_kernel, identity):
    """One ensemble tracking f(x) = x and the sequence (f, 0, ...)."""
    f = identity(super_kernel)
    seq = ObservableSequence.single(f)
    return f, seq, simulation_service.run_replicates(point_config, [f, f], seq)


class TestMartingale:

    def test_tracks_start_at_projection(self, point_config, tracked):
        f, _, ensemble = tracked
        tracks = supercritical_service.track_martingale(point_config, f, ensemble=ensemble)
        assert tracks.values.shape == (100, 11)
        np.testing.assert_allclose(tracks.values[:, 0], 3.0)

    def test_mean_is_constant(self, point_config, tracked):
        f, _, ensemble = tracked
        tracks = supercritical_service.track_martingale(point_config, f, ensemble=ensemble)
        means, errs = tracks.mean(), tracks.stderr()
        for n in range(1, 11):
            assert abs(means[n] - 3.0) < 4 * errs[n]

    def test_second_moment_oracle(self, super_kernel, identity):
        f = identity(super_kernel)
        assert supercritical_service.martingale_second_moment(f, 0, 1.0, super_kernel) == pytest.approx(1.0)
        # ((2a x)^2 + 2 sigma^2) / (2a)^2
        expected = (3.24 + 2.0) / 3.24
        assert supercritical_service.martingale_second_moment(f, 1, 1.0, super_kernel) == pytest.approx(expected)

    def test_slope_test_skips_constant_generation(self, point_config, tracked):
        f, _, ensemble = tracked
        tracks = supercritical_service.track_martingale(point_config, f, ensemble=ensemble)
        slopes = supercritical_service.martingale_slope_test(tracks)
        assert [s.n for s in slopes] == list(range(2, 11))
        assert sum(s.passed for s in slopes) >= 7

    def test_tracks_helpers(self):
        tracks = MartingaleTracks(np.array([[1.0, 2.0], [1.0, 4.0]]))
        np.testing.assert_array_equal(tracks.final_value, [2.0, 4.0])
        np.testing.assert_array_equal(tracks.second_moment(), [1.0, 10.0])

    def test_requires_supercritical_kernel(self, sub_kernel, identity):
        config = SimulationConfig(kernel=sub_kernel, depth=3, replicates=2)
        with pytest.raises(RegimeError):
            supercritical_service.track_martingale(config, identity(sub_kernel))


class TestRatioAndGap:

    def test_ratio_median(self, point_config, tracked):
        f, _, ensemble = tracked
        summary = supercritical_service.ratio_diagnostic(point_config, f, ensemble=ensemble)
        assert summary.target == pytest.approx(1.8 / 0.8)
        assert summary.used + summary.excluded == 100
        assert summary.lower <= summary.median <= summary.upper
        assert abs(summary.median - summary.target) < 0.1

    def test_ratio_needs_positive_a(self, identity):
        kernel = BarKernel(a=-0.9)
        config = SimulationConfig(kernel=kernel, depth=3, replicates=10)
        with pytest.raises(RegimeError):
            supercritical_service.ratio_diagnostic(config, identity(kernel))

    def test_ratio_degenerate_for_even_observable(self, point_config, super_kernel):
        f = hermite_service.preset("square-centered", super_kernel)
        with pytest.raises(DegenerateDiagnosticError):
            supercritical_service.ratio_diagnostic(point_config, f)

    def test_cesaro_gap(self, super_kernel, tracked):
        _, _, ensemble = tracked
        gaps = supercritical_service.cesaro_gap(ensemble, super_kernel)
        assert gaps.shape == (11,)
        # n = 0: |1 - 2a/(2a-1)| |x|
        assert gaps[0] == pytest.approx(1.25 * 3.0)
        assert gaps[-1] < gaps[0]


class TestNormalizedResidual:

    def test_residual_vanishes_at_deepest_depth(self, super_kernel, tracked):
        _, seq, ensemble = tracked
        residuals = supercritical_service.residuals_at(ensemble, seq, 10, super_kernel, offset=1)
        np.testing.assert_allclose(residuals, 0.0, atol=1e-9)

    def test_spread_shrinks_below_surrogate_depth(self, point_config, tracked):
        _, seq, ensemble = tracked
        summary = supercritical_service.normalized_functional_residual(
            point_config, seq, n1=4, n2=8, ensemble=ensemble, offset=1
        )
        assert summary.n1 == 4 and summary.n2 == 8
        assert summary.iqr_n2 > 0.0
        assert summary.shrinking

    def test_default_depths_avoid_surrogate(self, point_config, tracked):
        _, seq, ensemble = tracked
        summary = supercritical_service.normalized_functional_residual(point_config, seq, ensemble=ensemble, offset=1)
        assert (summary.n1, summary.n2) == (2, 8)
        assert summary.iqr_n2 > 0.0

    def test_needs_positive_a(self, identity):
        kernel = BarKernel(a=-0.9)
        f = identity(kernel)
        config = SimulationConfig(kernel=kernel, depth=4, replicates=4)
        with pytest.raises(ValueError):
            supercritical_service.normalized_functional_residual(config, ObservableSequence.single(f))

    def test_invalid_depths(self, point_config, super_kernel, identity):
        seq = ObservableSequence.single(identity(super_kernel))
        with pytest.raises(ValueError):
            supercritical_service.normalized_functional_residual(point_config, seq, n1=10)
        with pytest.raises(ValueError):
            supercritical_service.normalized_functional_residual(point_config, seq, n1=4, n2=10)
        with pytest.raises(ValueError):
            supercritical_service.normalized_functional_residual(point_config, seq, n1=6, n2=5)

    def test_interquartile_range(self):
        assert interquartile_range(np.arange(5.0)) == pytest.approx(2.0)
