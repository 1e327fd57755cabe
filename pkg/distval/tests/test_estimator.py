#!/usr/bin/env python3
"""
Tests for the D-Shapley and Fast-D-Shapley estimators, cardinality schedules,
prefix extraction and the stopping rule
"""

import math

import numpy as np
import pytest

from distval.core import ConfigError, DataError, Dataset, InsufficientSamplesError, RandomSource, ValueTable
from distval.estimator import (EstimatorConfig, IterationRecord, WeightSchedule, d_shapley, fast_d_shapley,
                               iteration_bound, prefix_values, stopping_rule, subsample)
from distval.interpolate import ValueInterpolator
from distval.potentials import ConstantPotential, MeanEstimationPotential, analytic_mean_value
from distval.synth import make_normal


@pytest.fixture(scope='module')
def normal_db():
    return make_normal(500, dim=1, seed=0)


@pytest.fixture(scope='module')
def mean_potential(normal_db):
    return MeanEstimationPotential.from_database(normal_db)


def _analytic(Z, m, U):
    return np.array([analytic_mean_value(p, m, U.mu, U.R2) for p in Z.points])


def _off_shell_points(U):
    """Twenty points at ‖z−μ‖ ∈ [0, 0.6·R] ∪ [1.4·R, 2.5·R], clear of the ‖z−μ‖² = R² shell"""
    offsets = np.array([0.0, 0.15, -0.15, 0.3, -0.3, 0.45, -0.45, 0.6, -0.6, 1.4,
                        -1.4, 1.6, -1.6, 1.8, -1.8, 2.0, -2.0, 2.2, -2.2, 2.5]) * math.sqrt(U.R2)
    return Dataset((U.mu[0] + offsets).reshape(-1, 1), ids=np.arange(10000, 10000 + len(offsets)))


def _agrees(estimate, stderrs, reference, sigmas=3.0):
    """Every point within `sigmas` standard errors"""
    return bool(np.all(np.abs(estimate - reference) <= sigmas * stderrs + 1e-12))


class TestWeightSchedule:

    def test_uniform(self):
        schedule = WeightSchedule.uniform(4)
        np.testing.assert_array_equal(schedule.weights, np.full(4, 0.25))
        assert schedule.reweight(3) == 1.0
        assert schedule.expected_cardinality() == pytest.approx(2.5)

    def test_inverse_power(self):
        schedule = WeightSchedule.inverse_power(4, 1.0)
        raw = 1.0 / np.arange(1, 5)
        np.testing.assert_allclose(schedule.weights, raw / raw.sum())
        assert schedule.weights.sum() == pytest.approx(1.0)
        assert schedule.reweight(1) == pytest.approx(1.0 / (schedule.weights[0] * 4))

    def test_b_below_half_rejected(self):
        with pytest.raises(ConfigError):
            WeightSchedule.inverse_power(10, 0.4)

    def test_half_is_uniform_weights(self):
        np.testing.assert_allclose(WeightSchedule.inverse_power(5, 0.5).weights, np.full(5, 0.2))

    def test_conditional_renormalizes(self):
        schedule = WeightSchedule.inverse_power(10, 1.0)
        head = schedule.conditional(4)
        assert head.m == 4
        assert head.weights.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(head.weights, WeightSchedule.inverse_power(4, 1.0).weights)
        assert schedule.conditional(10) is schedule
        with pytest.raises(ConfigError):
            schedule.conditional(11)

    def test_samples_stay_in_range(self):
        schedule = WeightSchedule.inverse_power(7, 1.0)
        draws = [schedule.sample(RandomSource(0).stream('cardinality', t)) for t in range(300)]
        assert min(draws) >= 1 and max(draws) <= 7

    def test_from_spec(self):
        assert WeightSchedule.from_spec(5, 'uniform').is_uniform
        assert WeightSchedule.from_spec(5, 'inverse_power').b == 1.0
        with pytest.raises(ConfigError):
            WeightSchedule.from_spec(5, 'geometric')


class TestEstimatorConfig:

    def test_t_max_below_window(self):
        with pytest.raises(ConfigError, match="T_max"):
            EstimatorConfig(m=5, T_max=50, window=100)

    def test_threshold_range(self):
        with pytest.raises(ConfigError, match="threshold"):
            EstimatorConfig(m=5, T_max=200, threshold=1.0)
        assert EstimatorConfig(m=5, T_max=200, threshold=0.0).threshold == 0.0

    def test_schedule_horizon_must_match(self):
        with pytest.raises(ConfigError, match="horizon"):
            EstimatorConfig(m=5, T_max=200, schedule=WeightSchedule.uniform(6))


class TestStoppingRule:

    def _table(self, rows, window=3):
        table = ValueTable([0, 1], m=2, seed=0, schedule_name='uniform', window=window)
        for row in rows:
            table.update(np.array(row, dtype=float))
        return table

    def test_needs_a_full_window(self):
        assert not stopping_rule(self._table([[1, 1], [1, 1]]), window=3, threshold=0.5)

    def test_zero_threshold_never_stops(self):
        assert not stopping_rule(self._table([[0, 0]] * 5), window=3, threshold=0.0)

    def test_all_zero_changes_stop(self):
        assert stopping_rule(self._table([[0, 0]] * 5), window=3, threshold=0.01)

    def test_small_changes_stop(self):
        table = self._table([[1.0, 1.0]] * 20 + [[1.001, 0.999]] * 3)
        assert stopping_rule(table, window=3, threshold=0.01)

    def test_large_changes_continue(self):
        table = self._table([[1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, 1.0]])
        assert not stopping_rule(table, window=3, threshold=0.01)


class TestDShapley:

    def test_rejects_importance_schedule(self, normal_db, mean_potential):
        config = EstimatorConfig(m=5, T_max=100, schedule=WeightSchedule.inverse_power(5, 1.0))
        with pytest.raises(ConfigError, match="fast_d_shapley"):
            d_shapley(normal_db.take(np.arange(3)), normal_db, mean_potential, config)

    def test_empty_inputs(self, normal_db, mean_potential):
        config = EstimatorConfig(m=5, T_max=100)
        with pytest.raises(DataError):
            d_shapley(normal_db.empty(), normal_db, mean_potential, config)
        with pytest.raises(DataError):
            d_shapley(normal_db.take(np.arange(3)), normal_db.empty(), mean_potential, config)

    def test_constant_potential_gives_zero(self, normal_db):
        Z = normal_db.take(np.arange(10))
        config = EstimatorConfig(m=10, T_max=500, window=50, seed=3)
        table = d_shapley(Z, normal_db, ConstantPotential(0.4), config)
        np.testing.assert_array_equal(table.means, np.zeros(10))
        assert table.converged
        assert table.count == 50

    def test_horizon_one_is_singleton_gain(self, normal_db, mean_potential):
        Z = normal_db.take(np.arange(5))
        config = EstimatorConfig(m=1, T_max=100, window=50, threshold=0.0)
        table = d_shapley(Z, normal_db, mean_potential, config)
        expected = [mean_potential.evaluate(Z.take([i])) for i in range(5)]
        np.testing.assert_allclose(table.means, expected, rtol=1e-12)

    def test_deterministic_per_seed(self, normal_db, mean_potential):
        Z = normal_db.take(np.arange(8))
        config = EstimatorConfig(m=10, T_max=300, threshold=0.0, seed=11)
        a = d_shapley(Z, normal_db, mean_potential, config)
        b = d_shapley(Z, normal_db, mean_potential, config)
        np.testing.assert_array_equal(a.means, b.means)
        c = d_shapley(Z, normal_db, mean_potential, EstimatorConfig(m=10, T_max=300, threshold=0.0, seed=12))
        assert not np.array_equal(a.means, c.means)

    def test_workers_do_not_change_results(self, normal_db, mean_potential):
        Z = normal_db.take(np.arange(8))
        serial = d_shapley(Z, normal_db, mean_potential, EstimatorConfig(m=10, T_max=200, threshold=0.0, seed=5))
        parallel = d_shapley(Z, normal_db, mean_potential,
                             EstimatorConfig(m=10, T_max=200, threshold=0.0, seed=5, workers=2))
        np.testing.assert_array_equal(serial.means, parallel.means)

    def test_cost_accounting(self, normal_db, mean_potential):
        Z = normal_db.take(np.arange(4))
        table = d_shapley(Z, normal_db, mean_potential, EstimatorConfig(m=6, T_max=100, threshold=0.0))
        expected = sum((r.k - 1) + len(Z) * r.k for r in table.records)
        assert table.cost == expected
        assert len(table.records) == 100

    @pytest.mark.parametrize('m', [1, 5, 20, 50])
    def test_matches_closed_form(self, normal_db, mean_potential, m):
        Z = _off_shell_points(mean_potential)
        config = EstimatorConfig(m=m, T_max=2000, threshold=0.0, seed=m)
        table = d_shapley(Z, normal_db, mean_potential, config)
        assert _agrees(table.means, table.stderrs, _analytic(Z, m, mean_potential))


class TestFastDShapley:

    def test_uniform_full_sample_matches_d_shapley(self, normal_db, mean_potential):
        Z = normal_db.take(np.arange(12))
        config = EstimatorConfig(m=15, T_max=400, threshold=0.0, seed=2)
        plain = d_shapley(Z, normal_db, mean_potential, config)
        fast = fast_d_shapley(Z, normal_db, mean_potential, config, subsample_p=1.0)
        np.testing.assert_array_equal(plain.means, fast.means)
        assert plain.count == fast.count

    def test_importance_schedule_matches_closed_form(self, normal_db, mean_potential):
        m = 20
        Z = _off_shell_points(mean_potential)
        config = EstimatorConfig(m=m, T_max=3000, schedule=WeightSchedule.inverse_power(m, 1.0),
                                 threshold=0.0, seed=4)
        table = fast_d_shapley(Z, normal_db, mean_potential, config)
        assert _agrees(table.means, table.stderrs, _analytic(Z, m, mean_potential))

    def test_importance_schedule_is_cheaper(self, normal_db, mean_potential):
        m = 200
        Z = normal_db.take(np.arange(5))
        uniform = fast_d_shapley(Z, normal_db, mean_potential,
                                 EstimatorConfig(m=m, T_max=300, threshold=0.0, seed=1))
        weighted = fast_d_shapley(Z, normal_db, mean_potential,
                                  EstimatorConfig(m=m, T_max=300, threshold=0.0, seed=1,
                                                  schedule=WeightSchedule.inverse_power(m, 1.0)))
        assert weighted.cost / uniform.cost < 0.6

    def test_subsample_without_interpolation(self, normal_db, mean_potential):
        Z = normal_db.take(np.arange(40))
        config = EstimatorConfig(m=5, T_max=100, threshold=0.0, seed=0)
        table = fast_d_shapley(Z, normal_db, mean_potential, config, subsample_p=0.3)
        assert 0 < len(table) < len(Z)
        assert not table.interpolated.any()
        assert set(table.ids.tolist()) <= set(Z.ids.tolist())

    def test_subsample_with_interpolation(self, normal_db, mean_potential):
        Z = normal_db.take(np.arange(40))
        config = EstimatorConfig(m=5, T_max=100, threshold=0.0, seed=0)
        table = fast_d_shapley(Z, normal_db, mean_potential, config, subsample_p=0.3,
                               interpolator=ValueInterpolator(k_neighbors=3))
        assert table.ids.tolist() == Z.ids.tolist()
        n_estimated = len(table.estimated_ids)
        assert table.interpolated.sum() == len(Z) - n_estimated
        assert np.all(np.isnan(table.stderrs[table.interpolated]))
        assert np.all(table.to_frame()['count'] == table.count)

    def test_subsample_rate_checked(self, normal_db, mean_potential):
        config = EstimatorConfig(m=5, T_max=100)
        for p in (0.0, 1.5):
            with pytest.raises(ConfigError, match="subsample_p"):
                fast_d_shapley(normal_db.take(np.arange(5)), normal_db, mean_potential, config, subsample_p=p)

    def test_tiny_rate_keeps_a_point(self):
        Z = Dataset(np.zeros((3, 1)))
        kept = [len(subsample(Z, 0.01, RandomSource(seed))) for seed in range(20)]
        assert min(kept) >= 1


class TestPrefixValues:

    def test_full_horizon_reproduces_run(self, normal_db, mean_potential):
        Z = normal_db.take(np.arange(6))
        config = EstimatorConfig(m=10, T_max=300, threshold=0.0, seed=8)
        table = d_shapley(Z, normal_db, mean_potential, config)
        again = table.prefix(10, config.schedule)
        np.testing.assert_array_equal(again.means, table.means)

    def test_half_horizon_matches_independent_run(self, normal_db, mean_potential):
        Z = _off_shell_points(mean_potential)
        config = EstimatorConfig(m=20, T_max=4000, threshold=0.0, seed=9)
        table = d_shapley(Z, normal_db, mean_potential, config)
        prefix = table.prefix(10, config.schedule)
        assert prefix.m == 10
        assert _agrees(prefix.means, prefix.stderrs, _analytic(Z, 10, mean_potential))

    def test_no_eligible_iterations(self):
        records = [IterationRecord(t=1, k=5, contributions=np.zeros(2))]
        with pytest.raises(InsufficientSamplesError, match="insufficient samples"):
            prefix_values(records, 2, WeightSchedule.uniform(5))

    def test_needs_recorded_cardinalities(self, normal_db, mean_potential):
        config = EstimatorConfig(m=5, T_max=100, record_cardinalities=False)
        table = d_shapley(normal_db.take(np.arange(3)), normal_db, mean_potential, config)
        with pytest.raises(InsufficientSamplesError):
            table.prefix(2, config.schedule)


class TestIterationBound:

    def test_uniform_trivial_bound(self):
        assert iteration_bound(10, eps=0.1, delta=0.1, m=5) == math.ceil(math.log(100) / 0.01)

    def test_stable_potential_needs_fewer_iterations(self):
        m = 100
        schedule = WeightSchedule.inverse_power(m, 1.0)
        trivial = iteration_bound(100, 0.05, 0.05, m)
        stable = iteration_bound(100, 0.05, 0.05, m, schedule, beta=lambda k: 1.0 / k)
        assert stable < trivial

    def test_arguments_checked(self):
        with pytest.raises(ConfigError):
            iteration_bound(10, eps=0.0, delta=0.1, m=5)
        with pytest.raises(ConfigError):
            iteration_bound(10, eps=0.1, delta=1.0, m=5)


class TestSamplingProperties:

    @pytest.mark.parametrize('schedule', [WeightSchedule.uniform(10), WeightSchedule.inverse_power(10, 1.0)],
                             ids=['uniform', 'inverse_power'])
    def test_grand_mean_is_unbiased(self, normal_db, mean_potential, schedule):
        Z = _off_shell_points(mean_potential).take([0, 9, 15])
        runs = np.array([fast_d_shapley(Z, normal_db, mean_potential,
                                        EstimatorConfig(m=10, T_max=50, window=50, threshold=0.0, seed=seed,
                                                        schedule=schedule, record_cardinalities=False)).means
                         for seed in range(60)])
        grand = runs.mean(axis=0)
        stderr = runs.std(axis=0, ddof=1) / math.sqrt(len(runs))
        assert np.all(np.abs(grand - _analytic(Z, 10, mean_potential)) <= 3 * stderr)

    @pytest.mark.slow
    def test_doubling_iterations_halves_variance(self, normal_db, mean_potential):
        Z = _off_shell_points(mean_potential).take([0, 9, 15])

        def spread(T):
            runs = np.array([d_shapley(Z, normal_db, mean_potential,
                                       EstimatorConfig(m=10, T_max=T, window=50, threshold=0.0, seed=seed,
                                                       record_cardinalities=False)).means
                             for seed in range(400)])
            return runs.var(axis=0, ddof=1).sum()

        assert 1.6 <= spread(50) / spread(100) <= 2.5
