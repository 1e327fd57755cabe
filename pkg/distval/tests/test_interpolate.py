#!/usr/bin/env python3
"""
Tests for the k-NN value interpolator
"""

import numpy as np
import pytest

from distval.core import LABEL_CATEGORICAL, LABEL_NONE, ConfigError, DataError, DataPoint, Dataset, RandomSource
from distval.estimator import subsample
from distval.evalharness import spearman
from distval.interpolate import ValueInterpolator
from distval.potentials import MeanEstimationPotential, analytic_mean_value
from distval.synth import make_normal


def _pairs(data, values):
    return list(zip(data.points, list(values)))


def _mean_values(data, m=10):
    U = MeanEstimationPotential.from_database(data)
    return np.array([analytic_mean_value(p, m, U.mu, U.R2) for p in data.points])


class TestValueInterpolator:

    def test_single_pair_predicts_everywhere(self):
        data = Dataset(np.array([[0.5, 0.5]]))
        fitted = ValueInterpolator().fit(_pairs(data, [0.3]), label_kind=LABEL_NONE)
        queries = Dataset(np.random.default_rng(0).normal(size=(5, 2)))
        np.testing.assert_allclose(fitted.predict_many(queries), np.full(5, 0.3))

    def test_constant_values(self):
        data = make_normal(30, dim=2, seed=1)
        fitted = ValueInterpolator().fit(_pairs(data, np.full(30, -0.2)), label_kind=LABEL_NONE)
        np.testing.assert_allclose(fitted.predict_many(make_normal(10, dim=2, seed=2)), np.full(10, -0.2))

    def test_exact_match_returns_fitted_value(self):
        data = make_normal(20, dim=2, seed=3)
        values = np.arange(20, dtype=float)
        fitted = ValueInterpolator().fit(_pairs(data, values), label_kind=LABEL_NONE)
        assert fitted.predict(data.point(7)) == 7.0

    def test_uniform_weighting_averages(self):
        data = Dataset(np.array([[-1.0], [1.0], [10.0]]))
        fitted = ValueInterpolator(k_neighbors=2, weighting='uniform').fit(_pairs(data, [0.0, 1.0, 5.0]),
                                                                          label_kind=LABEL_NONE)
        assert fitted.predict(DataPoint(np.array([0.0]))) == pytest.approx(0.5)

    def test_inverse_distance_favors_nearer(self):
        data = Dataset(np.array([[0.0], [4.0]]))
        fitted = ValueInterpolator(k_neighbors=2).fit(_pairs(data, [0.0, 1.0]), label_kind=LABEL_NONE)
        assert fitted.predict(DataPoint(np.array([1.0]))) < 0.5

    def test_predictions_stay_in_fitted_range(self):
        data = make_normal(50, dim=2, seed=4)
        values = np.random.default_rng(4).uniform(-1, 1, size=50)
        fitted = ValueInterpolator().fit(_pairs(data, values), label_kind=LABEL_NONE)
        low, high = fitted.value_range
        predicted = fitted.predict_many(make_normal(100, dim=2, seed=5))
        assert np.all(predicted >= low) and np.all(predicted <= high)

    def test_no_pairs(self):
        with pytest.raises(DataError):
            ValueInterpolator().fit([])

    def test_options_checked(self):
        with pytest.raises(ConfigError):
            ValueInterpolator(k_neighbors=0)
        with pytest.raises(ConfigError):
            ValueInterpolator(weighting='gaussian')
        with pytest.raises(ConfigError):
            ValueInterpolator(label_handling='ignore')

    def test_dimension_mismatch(self):
        fitted = ValueInterpolator().fit(_pairs(make_normal(5, dim=2), np.zeros(5)), label_kind=LABEL_NONE)
        with pytest.raises(DataError, match="dimension mismatch"):
            fitted.predict_many(make_normal(3, dim=3))


class TestLabelHandling:

    def _two_class(self):
        X = np.array([[0.0], [0.1], [0.2], [5.0]])
        return Dataset(X, [0, 0, 1, 1], label_kind=LABEL_CATEGORICAL)

    def test_per_class_only_uses_own_class(self):
        data = self._two_class()
        fitted = ValueInterpolator(k_neighbors=1).fit(_pairs(data, [1.0, 1.0, -1.0, -1.0]), n_classes=2,
                                                      label_kind=LABEL_CATEGORICAL)
        query = Dataset(np.array([[0.05], [0.05]]), [0, 1], label_kind=LABEL_CATEGORICAL)
        np.testing.assert_allclose(fitted.predict_many(query), [1.0, -1.0])
        assert not fitted.warnings

    def test_missing_class_falls_back_to_penalty(self):
        data = Dataset(np.array([[0.0], [1.0]]), [0, 0], label_kind=LABEL_CATEGORICAL)
        fitted = ValueInterpolator(k_neighbors=1).fit(_pairs(data, [0.2, 0.4]), n_classes=2,
                                                      label_kind=LABEL_CATEGORICAL)
        assert fitted.warnings and 'distance-penalty' in fitted.warnings[0]
        query = Dataset(np.array([[0.9]]), [1], label_kind=LABEL_CATEGORICAL, n_classes=2)
        assert fitted.predict_many(query)[0] == pytest.approx(0.4)

    def test_distance_penalty_prefers_same_class(self):
        data = self._two_class()
        fitted = ValueInterpolator(k_neighbors=1, label_handling='distance-penalty').fit(
            _pairs(data, [1.0, 1.0, -1.0, -1.0]), n_classes=2, label_kind=LABEL_CATEGORICAL)
        query = Dataset(np.array([[4.0]]), [0], label_kind=LABEL_CATEGORICAL)
        assert fitted.predict_many(query)[0] == 1.0


class TestInterpolationQuality:

    def test_linear_values(self):
        gen = np.random.default_rng(6)
        X = gen.uniform(0, 1, size=(100, 2))
        a = np.array([0.7, -0.3])
        fitted = ValueInterpolator(k_neighbors=5).fit(_pairs(Dataset(X), X @ a), label_kind=LABEL_NONE)
        X_new = gen.uniform(0.1, 0.9, size=(50, 2))
        error = np.mean(np.abs(fitted.predict_many(Dataset(X_new)) - X_new @ a))
        plain = ValueInterpolator(k_neighbors=5, weighting='uniform').fit(_pairs(Dataset(X), X @ a),
                                                                          label_kind=LABEL_NONE)
        baseline = np.mean(np.abs(plain.predict_many(Dataset(X_new)) - X_new @ a))
        assert error <= 2.0 * baseline

    def test_mean_potential_values(self):
        data = make_normal(150, dim=1, seed=7)
        values = _mean_values(data)
        train, held = data.take(np.arange(100)), data.take(np.arange(100, 150))
        fitted = ValueInterpolator().fit(_pairs(train, values[:100]), label_kind=LABEL_NONE)
        error = np.mean(np.abs(fitted.predict_many(held) - values[100:]))
        assert error < 0.1 * np.ptp(values)

    def test_error_grows_with_distance(self):
        data = make_normal(300, dim=1, seed=8)
        values = _mean_values(data)
        fitted = ValueInterpolator().fit(_pairs(data.take(np.arange(30)), values[:30]), label_kind=LABEL_NONE)
        held = data.take(np.arange(30, 300))
        error = np.abs(fitted.predict_many(held) - values[30:])
        assert spearman(fitted.distance_to_fitted(held), error) > 0

    def test_error_shrinks_with_sampling_rate(self):
        data = make_normal(200, dim=1, seed=9)
        values = _mean_values(data)
        errors = []
        for p in (0.1, 0.3, 0.5, 1.0):
            per_seed = []
            for seed in range(5):
                keep = subsample(data, p, RandomSource(seed))
                fitted = ValueInterpolator().fit(_pairs(data.take(keep), values[keep]), label_kind=LABEL_NONE)
                per_seed.append(np.mean(np.abs(fitted.predict_many(data) - values)))
            errors.append(np.mean(per_seed))
        assert all(a >= b for a, b in zip(errors, errors[1:]))
        assert errors[-1] == 0.0
