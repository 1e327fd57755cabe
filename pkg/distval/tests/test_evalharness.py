#!/usr/bin/env python3
"""
Tests for removal curves, the speed/recovery experiment and the pricing study
"""

import math

import numpy as np
import pandas as pd
import pytest

from distval.core import LABEL_CATEGORICAL, ConfigError, DataError, Dataset, ValueTable
from distval.estimator import EstimatorConfig, WeightSchedule, d_shapley, fast_d_shapley
from distval.evalharness import (addition_curve, apply_shift, noise_enrichment, point_removal_experiment,
                                 pricing_case_study, pricing_metrics, r2_between, removal_order,
                                 speedup_recovery_experiment, spearman, stability_regression, write_curve_csv,
                                 write_pricing_report)
from distval.potentials import (AccuracyPotential, AdditivePotential, ConstantPotential, LogisticLearner,
                                MeanEstimationPotential, analytic_mean_value)
from distval.synth import make_blobs, make_normal, split
from distval.tmc import TmcConfig


def _table(ids, values):
    table = ValueTable(list(ids), m=1, seed=0, schedule_name='uniform')
    table.update(np.asarray(values, dtype=float))
    return table


class TestStatistics:

    def test_spearman_examples(self):
        assert spearman([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0)
        assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
        assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)

    def test_spearman_ties_and_constants(self):
        assert math.isnan(spearman([1, 1, 1], [1, 2, 3]))
        assert spearman([1, 2, 2, 3], [1, 2, 2, 3]) == pytest.approx(1.0)

    def test_spearman_input_checks(self):
        with pytest.raises(DataError):
            spearman([1, 2, 3], [1, 2])
        with pytest.raises(DataError):
            spearman([1], [1])

    def test_r2_between(self):
        a = np.array([0.1, 0.5, 0.2, 0.9])
        assert r2_between(a, a.copy()) == 1.0
        assert r2_between(a, 2 * a + 1) == pytest.approx(1.0)
        assert r2_between(a, np.ones(4)) == 0.0

    def test_noise_enrichment(self):
        data = Dataset(np.zeros((8, 1)))
        values = _table(range(8), [-1, -1, 1, 1, 1, 1, 1, 1])
        noisy = np.array([True, True, False, False, False, False, False, False])
        assert noise_enrichment(values, data, noisy) == pytest.approx(4.0)
        assert math.isnan(noise_enrichment(values, data, np.zeros(8, dtype=bool)))

    def test_similar_points_get_similar_values(self):
        data = make_normal(200, dim=1, seed=3)
        U = MeanEstimationPotential.from_database(data)
        values = d_shapley(data, data, U, EstimatorConfig(m=10, T_max=200, threshold=0.0, seed=0,
                                                          record_cardinalities=False))
        fit = stability_regression(data, values, n_pairs=100, seed=0)
        assert fit['pairs'] == 100
        assert fit['slope'] > 0
        assert abs(fit['intercept']) <= 3 * fit['intercept_stderr']

    def test_stability_regression_needs_pairs(self):
        data = make_normal(5, dim=1, seed=0)
        with pytest.raises(DataError, match="disjoint pairs"):
            stability_regression(data, _table(data.ids, np.zeros(5)), n_pairs=10, seed=0)


class TestPointRemoval:

    @pytest.fixture(scope='class')
    def blobs(self):
        data, _ = make_blobs(60, dim=2, margin=3.0, seed=2)
        train, test = data.take(np.arange(40)), data.take(np.arange(40, 60))
        return train, AccuracyPotential(LogisticLearner(epochs=30), test)

    def test_curve_shape(self, blobs):
        train, U = blobs
        values = _table(train.ids, np.linspace(0, 1, len(train)))
        curve = point_removal_experiment(train, values, U, steps=10)
        assert curve.accuracy[0] == U.evaluate(train)
        assert curve.fractions[0] == 0.0 and curve.fractions[-1] == 1.0
        assert np.all(np.diff(curve.fractions) > 0)
        assert curve.accuracy[-1] == U.empty_value

    def test_constant_potential_is_flat(self, blobs):
        train, _ = blobs
        values = _table(train.ids, np.zeros(len(train)))
        curve = point_removal_experiment(train, values, ConstantPotential(0.6), steps=5, ordering='random')
        np.testing.assert_array_equal(curve.accuracy, np.full(len(curve.fractions), 0.6))
        assert curve.area == pytest.approx(0.6)
        np.testing.assert_array_equal(curve.relative, np.zeros(len(curve.fractions)))

    def test_missing_ids(self, blobs):
        train, U = blobs
        with pytest.raises(DataError):
            point_removal_experiment(train, _table([0, 1], [0.0, 1.0]), U, steps=5)

    def test_ties_break_by_id(self):
        ids = np.array([5, 2, 9, 1])
        order = removal_order(ids, np.zeros(4), 'by_value_desc')
        assert ids[order].tolist() == [1, 2, 5, 9]
        order = removal_order(ids, np.array([0.0, 1.0, 1.0, 0.0]), 'by_value_desc')
        assert ids[order].tolist() == [2, 9, 1, 5]

    def test_random_order_is_seeded(self):
        ids = np.arange(20)
        a = removal_order(ids, np.zeros(20), 'random', seed=4)
        assert np.array_equal(a, removal_order(ids, np.zeros(20), 'random', seed=4))
        assert sorted(a.tolist()) == list(range(20))
        with pytest.raises(ConfigError):
            removal_order(ids, np.zeros(20), 'by_name')

    def test_curve_csv(self, blobs, tmp_path):
        train, U = blobs
        values = _table(train.ids, np.linspace(0, 1, len(train)))
        curves = [point_removal_experiment(train, values, U, 4, ordering) for ordering in ('by_value_desc', 'random')]
        path = tmp_path / 'curves.csv'
        write_curve_csv(curves, str(path))
        frame = pd.read_csv(path)
        assert list(frame.columns) == ['ordering', 'step', 'fraction', 'accuracy', 'relative_accuracy']
        assert set(frame['ordering']) == {'by_value_desc', 'random'}

    @pytest.mark.slow
    def test_high_value_points_matter_most(self):
        desc_areas, random_areas, enrichments = [], [], []
        for seed in range(5):
            data, flipped = make_blobs(1100, dim=2, margin=3.0, flip_rate=0.1, seed=seed, clean_tail=100)
            train, test = data.take(np.arange(1000)), data.take(np.arange(1000, 1100))
            U = AccuracyPotential(LogisticLearner(epochs=30), test)
            config = EstimatorConfig(m=10, T_max=60, window=50, threshold=0.0, seed=seed,
                                     record_cardinalities=False)
            values = fast_d_shapley(train, train, U, config)
            desc_areas.append(point_removal_experiment(train, values, U, steps=10, ordering='by_value_desc').area)
            random_areas.append(point_removal_experiment(train, values, U, steps=10, ordering='random',
                                                         seed=seed).area)
            enrichments.append(noise_enrichment(values, train, flipped[:1000]))
        assert np.mean(desc_areas) < np.mean(random_areas)
        assert np.mean(enrichments) >= 2.0


class TestSpeedupRecovery:

    @pytest.fixture(scope='class')
    def setting(self):
        db = make_normal(300, dim=1, seed=6)
        return db.take(np.arange(50)), db, MeanEstimationPotential.from_database(db)

    def test_baseline_setting_recovers_itself(self, setting):
        Z, db, U = setting
        config = EstimatorConfig(m=10, T_max=200, threshold=0.0, seed=0)
        results = speedup_recovery_experiment(Z, db, U, config, [(WeightSchedule.uniform(10), 1.0)])
        assert results == [(1.0, 1.0)]

    @pytest.mark.slow
    def test_importance_schedule_trade_off(self, setting):
        Z, db, U = setting
        m = 20
        config = EstimatorConfig(m=m, T_max=3000, threshold=0.0, seed=0)
        results = speedup_recovery_experiment(Z, db, U, config, [(WeightSchedule.inverse_power(m, 1.0), 1.0)])
        relative_cost, r2 = results[0]
        assert relative_cost < 0.6
        assert r2 >= 0.8

    def test_subsampling_costs_less(self, setting):
        Z, db, U = setting
        config = EstimatorConfig(m=10, T_max=200, threshold=0.0, seed=0)
        results = speedup_recovery_experiment(Z, db, U, config, [(WeightSchedule.uniform(10), 0.3)])
        relative_cost, r2 = results[0]
        assert relative_cost < 0.6
        assert 0.0 <= r2 <= 1.0

    @pytest.mark.slow
    def test_recovery_falls_with_cost(self):
        m = 10
        settings = [(WeightSchedule.uniform(m), 1.0), (WeightSchedule.inverse_power(m, 1.0), 1.0),
                    (WeightSchedule.uniform(m), 0.3), (WeightSchedule.inverse_power(m, 1.0), 0.3),
                    (WeightSchedule.inverse_power(m, 1.0), 0.1)]
        runs = []
        for seed in range(5):
            db = make_normal(300, dim=1, seed=seed)
            Z = db.take(np.arange(40))
            config = EstimatorConfig(m=m, T_max=1000, threshold=0.0, seed=seed, record_cardinalities=False)
            runs.append(speedup_recovery_experiment(Z, db, MeanEstimationPotential.from_database(db), config,
                                                    settings))
        costs, r2s = np.mean(np.array(runs), axis=0).T
        assert costs[0] == pytest.approx(1.0)
        assert np.all(np.diff(costs) < 0)
        # settings sharing a subsample differ only by estimation noise
        assert np.all(np.diff(r2s) <= 0.02)
        assert r2s[-1] < r2s[0]


class TestPricing:

    def test_identical_tables(self):
        table = _table([0, 1, 2, 3], [0.4, 0.1, 0.3, 0.2])
        rho, ape, error = pricing_metrics(table, table, [0, 1, 2, 3])
        assert rho == pytest.approx(1.0)
        assert ape == 0.0 and error is None

    def test_ape_ignores_order_of_sold_ids(self):
        val = _table([0, 1, 2], [0.3, 0.2, 0.5])
        sh = _table([0, 1, 2], [0.1, 0.4, 0.2])
        assert pricing_metrics(val, sh, [2, 0, 1])[1] == pricing_metrics(val, sh, [0, 1, 2])[1]
        assert pricing_metrics(val, sh, [0, 1, 2])[1] == pytest.approx(0.3)

    def test_non_positive_total_value(self):
        val = _table([0, 1], [-0.1, 0.05])
        rho, ape, error = pricing_metrics(val, val, [0, 1])
        assert math.isnan(ape)
        assert 'APE undefined' in error

    def test_apply_shift(self):
        data, _ = make_blobs(100, seed=1)
        noisy = apply_shift(data, feature_noise=0.5, seed=0)
        assert noisy.ids.tolist() == data.ids.tolist()
        assert not np.array_equal(noisy.X, data.X)
        only_zero = apply_shift(data, class_weights=[1.0, 0.0], seed=0)
        assert len(only_zero) == int(np.sum(data.y == 0))
        assert np.all(only_zero.y == 0)
        with pytest.raises(ConfigError):
            apply_shift(make_normal(10), class_weights=[1.0, 1.0])

    def test_addition_curve_ends_at_full_set(self):
        initial = Dataset(np.zeros((2, 1)), ids=[0, 1])
        additions = Dataset(np.zeros((5, 1)), ids=[2, 3, 4, 5, 6])
        U = AdditivePotential(7.0)
        curve = addition_curve(initial, additions, np.arange(5), U, steps=3, ordering='by_val')
        assert curve.accuracy[0] == pytest.approx(2.0 / 7.0)
        assert curve.accuracy[-1] == 1.0
        assert curve.fractions[-1] == 1.0

    @pytest.fixture(scope='class')
    def market(self):
        data = make_normal(240, dim=2, seed=2)
        seller, buyer, sold = split(data, [200, 20, 20], seed=0)
        return seller, buyer, sold

    def test_size_precondition(self, market):
        seller, buyer, sold = market
        with pytest.raises(ConfigError, match="pricing needs"):
            pricing_case_study(seller, buyer, sold.take(np.arange(10)), MeanEstimationPotential.from_database,
                               m=20, seeds=[0])

    def test_overlapping_ids(self, market):
        seller, buyer, _ = market
        with pytest.raises(DataError, match="disjoint"):
            pricing_case_study(seller, buyer, buyer, MeanEstimationPotential.from_database, m=20, seeds=[0])

    def test_one_market_per_seed(self, market):
        seller, buyer, sold = market
        with pytest.raises(ConfigError, match="one buyer and one sold set per seed"):
            pricing_case_study(seller, [buyer], [sold], MeanEstimationPotential.from_database, m=20, seeds=[0, 1])
        other_buyer, other_sold = split(make_normal(40, dim=2, seed=9), [20, 20], seed=0)
        report = pricing_case_study(
            seller, [buyer, other_buyer], [sold, other_sold], lambda db: AdditivePotential(1000.0), m=20,
            seeds=[0, 1], estimator=EstimatorConfig(m=20, T_max=100, threshold=0.0),
            tmc=TmcConfig(max_permutations=20, truncation_tolerance=0.0, threshold=0.0), steps=4)
        assert [row['seed'] for row in report.per_seed] == [0, 1]
        assert report.ape == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.slow
    def test_seller_and_buyer_agree(self):
        """Same-distribution markets at m = 100: ρ > 0.5 and APE < 0.25 over five fresh buyers"""
        m, seeds = 100, [0, 1, 2, 3, 4]
        seller = make_normal(1000, dim=2, seed=0)
        markets = [split(make_normal(2 * m, dim=2, seed=100 + seed), [m, m], seed=seed) for seed in seeds]
        report = pricing_case_study(
            seller, [b for b, _ in markets], [s for _, s in markets], MeanEstimationPotential.from_database,
            m=m, seeds=seeds,
            estimator=EstimatorConfig(m=2 * m, T_max=4000, threshold=0.0,
                                      schedule=WeightSchedule.inverse_power(2 * m, 1.0)),
            tmc=TmcConfig(max_permutations=500, truncation_tolerance=0.0, threshold=0.0), steps=10)
        assert report.ape_error is None
        assert report.rank_correlation > 0.5
        assert report.ape < 0.25
        curves = report.addition_curves
        assert curves['by_val'].accuracy[-1] == curves['by_sh'].accuracy[-1]

    def test_identical_point_gets_identical_value(self, market):
        seller, buyer, sold = market
        report = pricing_case_study(
            seller, buyer, sold, lambda db: AdditivePotential(1000.0), m=20, seeds=[0],
            estimator=EstimatorConfig(m=20, T_max=100, threshold=0.0),
            tmc=TmcConfig(max_permutations=20, truncation_tolerance=0.0, threshold=0.0), steps=4)
        assert report.ape == pytest.approx(0.0, abs=1e-9)
        assert report.ape_error is None

    def test_reproducible_and_consistent(self, market, tmp_path):
        seller, buyer, sold = market
        kwargs = dict(U_builder=MeanEstimationPotential.from_database, m=20, seeds=[0, 1],
                      estimator=EstimatorConfig(m=20, T_max=300, threshold=0.0,
                                                schedule=WeightSchedule.inverse_power(20, 1.0)),
                      tmc=TmcConfig(max_permutations=60, truncation_tolerance=0.0, threshold=0.0), steps=5)
        first = pricing_case_study(seller, buyer, sold, **kwargs)
        second = pricing_case_study(seller, buyer, sold, **kwargs)
        assert first.summary() == second.summary()
        curves = first.addition_curves
        assert set(curves) == {'by_val', 'by_sh', 'random'}
        assert curves['by_val'].accuracy[-1] == curves['by_sh'].accuracy[-1] == curves['random'].accuracy[-1]
        assert len(first.per_seed) == 2

        write_pricing_report(first, str(tmp_path / 'p.csv'), str(tmp_path / 'p.json'), extra={'command': 'price'})
        assert set(pd.read_csv(tmp_path / 'p.csv')['ordering']) == {'by_val', 'by_sh', 'random'}


def test_categorical_kind_survives_split():
    data, _ = make_blobs(30, seed=0)
    parts = split(data, [10, 20])
    assert all(p.label_kind == LABEL_CATEGORICAL for p in parts)
