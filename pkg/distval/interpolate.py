#!/usr/bin/env python3
"""
Value interpolation for subsampled valuation runs
k-NN regression on (point, value) pairs over standardized features. Labeled
points only borrow values from their own class, or across classes at a large
distance penalty when a class has no fitted point.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import distance

from .core import (LABEL_CATEGORICAL, ConfigError, DataError, DataPoint, Dataset, points_to_dataset,
                   standardize)

WEIGHTING_INVERSE_DISTANCE = 'inverse_distance'
WEIGHTING_UNIFORM = 'uniform'
LABELS_PER_CLASS = 'per-class'
LABELS_DISTANCE_PENALTY = 'distance-penalty'
PENALTY_DIAMETERS = 10.0


class ValueInterpolator:
    """Unfitted k-NN value regressor; fit() returns an immutable FittedInterpolator"""

    KEYS = ('k_neighbors', 'weighting', 'label_handling')

    def __init__(self, k_neighbors: int = 5, weighting: str = WEIGHTING_INVERSE_DISTANCE,
                 label_handling: str = LABELS_PER_CLASS):
        if not isinstance(k_neighbors, int) or isinstance(k_neighbors, bool) or k_neighbors < 1:
            raise ConfigError(f"interpolate.k_neighbors: must be an integer >= 1, got {k_neighbors}")
        if weighting not in (WEIGHTING_INVERSE_DISTANCE, WEIGHTING_UNIFORM):
            raise ConfigError(f"interpolate.weighting: must be 'inverse_distance' or 'uniform', got {weighting!r}")
        if label_handling not in (LABELS_PER_CLASS, LABELS_DISTANCE_PENALTY):
            raise ConfigError(f"interpolate.label_handling: must be 'per-class' or 'distance-penalty', "
                              f"got {label_handling!r}")
        self.k_neighbors = int(k_neighbors)
        self.weighting = weighting
        self.label_handling = label_handling

    @classmethod
    def from_config(cls, options, field: str = 'estimator.interpolate') -> 'ValueInterpolator':
        """Build from a config mapping; unknown keys are a ConfigError naming the key"""
        if not isinstance(options, dict):
            raise ConfigError(f"{field}: must be a mapping {{k_neighbors?, weighting?, label_handling?}}")
        for key in options:
            if key not in cls.KEYS:
                raise ConfigError(f"{field}.{key}: unknown option (accepted: {list(cls.KEYS)})")
        try:
            return cls(**options)
        except ConfigError as err:
            raise ConfigError(f"{field}.{str(err).removeprefix('interpolate.')}") from err

    def fit(self, pairs: Sequence[Tuple[DataPoint, float]], n_classes: int = None,
            label_kind: str = None) -> 'FittedInterpolator':
        if not pairs:
            raise DataError("cannot fit an interpolator on zero pairs")
        data = points_to_dataset([p for p, _ in pairs], label_kind=label_kind, n_classes=n_classes)
        values = np.array([float(v) for _, v in pairs])
        return FittedInterpolator(self, data, values, n_classes)

    def describe(self) -> dict:
        return {'k_neighbors': self.k_neighbors, 'weighting': self.weighting,
                'label_handling': self.label_handling}


class FittedInterpolator:

    def __init__(self, spec: ValueInterpolator, data: Dataset, values: np.ndarray, n_classes: int = None):
        self.spec = spec
        self.values = values
        self.warnings: List[str] = []
        standardized, self.mean, self.std = standardize(data)
        self.X = standardized.X
        self.labels: Optional[np.ndarray] = None
        self.mode = None
        self.penalty = 0.0

        if data.label_kind != LABEL_CATEGORICAL:
            return
        self.labels = data.y.astype(np.int64)
        self.mode = spec.label_handling
        if self.mode == LABELS_PER_CLASS:
            expected = max(n_classes or 0, data.n_classes or 0)
            missing = sorted(set(range(expected)) - set(np.unique(self.labels).tolist()))
            if missing:
                self.warnings.append(f"classes {missing} have no fitted values; "
                                     f"falling back to distance-penalty label handling")
                self.mode = LABELS_DISTANCE_PENALTY
        if self.mode == LABELS_DISTANCE_PENALTY:
            diameter = float(distance.pdist(self.X).max()) if self.X.shape[0] > 1 else 0.0
            self.penalty = PENALTY_DIAMETERS * diameter if diameter > 0 else PENALTY_DIAMETERS

    @property
    def value_range(self) -> Tuple[float, float]:
        return float(self.values.min()), float(self.values.max())

    def _distances(self, X_query: np.ndarray, labels: Optional[np.ndarray]) -> np.ndarray:
        d = distance.cdist((X_query - self.mean) / self.std, self.X)
        if self.labels is None or labels is None:
            return d
        mismatch = labels.reshape(-1, 1) != self.labels.reshape(1, -1)
        if self.mode == LABELS_PER_CLASS:
            return np.where(mismatch, np.inf, d)
        return d + self.penalty * mismatch

    def _combine(self, d_row: np.ndarray) -> float:
        finite = np.flatnonzero(np.isfinite(d_row))
        candidates = finite if finite.size else np.arange(d_row.shape[0])
        order = candidates[np.argsort(d_row[candidates], kind='stable')]
        nearest = order[:min(self.spec.k_neighbors, order.shape[0])]
        d = d_row[nearest]
        exact = nearest[d == 0]
        if exact.size:
            return float(self.values[exact].mean())
        if self.spec.weighting == WEIGHTING_UNIFORM:
            return float(self.values[nearest].mean())
        weights = 1.0 / d
        return float(np.dot(weights, self.values[nearest]) / weights.sum())

    def predict(self, z: DataPoint) -> float:
        labels = None
        if self.labels is not None and z.label is not None:
            labels = np.array([int(z.label)])
        d = self._distances(np.atleast_2d(z.features), labels)
        return self._combine(d[0])

    def predict_many(self, data: Dataset) -> np.ndarray:
        if len(data) == 0:
            return np.zeros(0)
        if data.dimension != self.X.shape[1]:
            raise DataError(f"dimension mismatch: fitted {self.X.shape[1]}, query {data.dimension}")
        labels = data.y.astype(np.int64) if data.label_kind == LABEL_CATEGORICAL else None
        d = self._distances(data.X, labels)
        return np.array([self._combine(row) for row in d])

    def distance_to_fitted(self, data: Dataset) -> np.ndarray:
        """Standardized distance from each query to its nearest fitted point"""
        return distance.cdist((data.X - self.mean) / self.std, self.X).min(axis=1)
