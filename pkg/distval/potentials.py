#!/usr/bin/env python3
"""
Built-in potential functions
Mean estimation (with its closed-form distributional value), logistic regression,
k-NN classification and ridge regression, each scored on a fixed held-out set
and mapped into [0, 1]. Also a few diagnostic potentials used by the oracles.
"""

import math
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .core import (LABEL_CATEGORICAL, LABEL_REAL, ConfigError, DataError, DataPoint, Dataset,
                   Potential, RandomSource, sample_subset)

DEFAULT_LR = 0.1
DEFAULT_EPOCHS = 200
DEFAULT_L2 = 1e-3
DEFAULT_NEIGHBORS = 5
DEFAULT_RIDGE_LAMBDA = 1.0


def _clip01(value: float) -> float:
    return float(min(1.0, max(0.0, value)))


# ============================================================================
# MEAN ESTIMATION
# ============================================================================

class MeanEstimationPotential(Potential):
    """
    U(S) = R² − ‖μ̂_S − μ‖², with U(∅) = 0.

    mu and R2 are frozen population quantities; unclipped by default because the
    closed-form value relies on the unclipped algebra.
    """

    name = 'mean'

    def __init__(self, mu, R2: float, clip: bool = False):
        self.mu = np.atleast_1d(np.asarray(mu, dtype=float))
        self.R2 = float(R2)
        self.clip = bool(clip)

    @classmethod
    def from_database(cls, db: Dataset, clip: bool = False) -> 'MeanEstimationPotential':
        """Freeze μ and R² = E‖s − μ‖² from the whole database"""
        if len(db) == 0:
            raise DataError("empty dataset")
        mu = db.X.mean(axis=0)
        R2 = float(np.mean(np.sum((db.X - mu) ** 2, axis=1)))
        return cls(mu, R2, clip=clip)

    def evaluate(self, train: Optional[Dataset]) -> float:
        if train is None or len(train) == 0:
            return 0.0
        if train.dimension != self.mu.shape[0]:
            raise DataError(f"dimension mismatch: potential has {self.mu.shape[0]}, data {train.dimension}")
        mu_hat = train.canonical().X.mean(axis=0)
        value = self.R2 - float(np.sum((mu_hat - self.mu) ** 2))
        return _clip01(value) if self.clip else value

    def describe(self) -> Dict:
        return {'name': self.name, 'R2': self.R2, 'clip': self.clip, 'dimension': int(self.mu.shape[0])}


def mean_value_constants(m: int) -> Tuple[float, float]:
    """
    c(m) = Σ_{k=2..m} 1/(k²(k−1)) and C(m) = 2 − 1/m − c(m)
    """
    if m < 1:
        raise ConfigError(f"m must be >= 1, got {m}")
    c = math.fsum(1.0 / (k * k * (k - 1)) for k in range(2, m + 1))
    return c, 2.0 - 1.0 / m - c


def analytic_mean_value(z, m: int, mu, R2: float) -> float:
    """
    Closed-form distributional value of z for the (unclipped) mean potential:
    (1/m)·[C(m)·(R² − ‖z−μ‖²) + (R² − R²/m)]
    """
    features = z.features if isinstance(z, DataPoint) else np.asarray(z, dtype=float)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    _, C = mean_value_constants(m)
    dist2 = float(np.sum((np.atleast_1d(features) - mu) ** 2))
    return (C * (R2 - dist2) + (R2 - R2 / m)) / m


# ============================================================================
# LEARNERS
# ============================================================================

class LogisticLearner:
    """Multinomial logistic regression, full-batch gradient descent from zero init"""

    kind = 'logistic'

    def __init__(self, lr: float = DEFAULT_LR, epochs: int = DEFAULT_EPOCHS, l2: float = DEFAULT_L2):
        if lr <= 0 or epochs < 1 or l2 < 0:
            raise ConfigError("logistic learner needs lr > 0, epochs >= 1, l2 >= 0")
        self.lr = float(lr)
        self.epochs = int(epochs)
        self.l2 = float(l2)

    def fit_predict(self, X: np.ndarray, y: np.ndarray, X_test: np.ndarray, n_classes: int) -> np.ndarray:
        n, d = X.shape
        Y = np.zeros((n, n_classes))
        Y[np.arange(n), y.astype(np.int64)] = 1.0
        W = np.zeros((d, n_classes))
        b = np.zeros(n_classes)
        for _ in range(self.epochs):
            P = _softmax(X @ W + b)
            residual = P - Y
            W = W - self.lr * (X.T @ residual / n + self.l2 * W)
            b = b - self.lr * residual.mean(axis=0)
        return np.argmax(X_test @ W + b, axis=1)

    def describe(self) -> Dict:
        return {'learner': self.kind, 'lr': self.lr, 'epochs': self.epochs, 'l2': self.l2}


class KnnLearner:
    """Majority vote over the k nearest training points (ties → smallest label)"""

    kind = 'knn'

    def __init__(self, k_neighbors: int = DEFAULT_NEIGHBORS):
        if k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be >= 1, got {k_neighbors}")
        self.k_neighbors = int(k_neighbors)

    def fit_predict(self, X: np.ndarray, y: np.ndarray, X_test: np.ndarray, n_classes: int) -> np.ndarray:
        k = min(self.k_neighbors, X.shape[0])
        distances = squared_distances(X_test, X)
        top_k = np.argsort(distances, axis=1, kind='stable')[:, :k]
        votes = np.zeros((X_test.shape[0], n_classes))
        neighbor_labels = y[top_k].astype(np.int64)
        for j in range(k):
            votes[np.arange(X_test.shape[0]), neighbor_labels[:, j]] += 1.0
        return np.argmax(votes, axis=1)

    def describe(self) -> Dict:
        return {'learner': self.kind, 'k_neighbors': self.k_neighbors}


class RidgeLearner:
    """Ridge regression with an unpenalized intercept"""

    kind = 'ridge'

    def __init__(self, lam: float = DEFAULT_RIDGE_LAMBDA):
        if lam < 0:
            raise ConfigError(f"ridge lambda must be >= 0, got {lam}")
        self.lam = float(lam)

    def fit_predict(self, X: np.ndarray, y: np.ndarray, X_test: np.ndarray) -> np.ndarray:
        x_bar = X.mean(axis=0)
        y_bar = y.mean()
        Xc = X - x_bar
        gram = Xc.T @ Xc + self.lam * np.eye(X.shape[1])
        w = np.linalg.lstsq(gram, Xc.T @ (y - y_bar), rcond=None)[0]
        return (X_test - x_bar) @ w + y_bar

    def describe(self) -> Dict:
        return {'learner': self.kind, 'lambda': self.lam}


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    distances = np.sum(a ** 2, axis=1).reshape(-1, 1) + np.sum(b ** 2, axis=1).reshape(1, -1)
    distances -= 2.0 * (a @ b.T)
    return np.maximum(distances, 0.0)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def accuracy(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    return float(np.mean(y_true.astype(np.int64) == np.asarray(y_pred).astype(np.int64)))


def r2_clipped(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """max(0, min(1, R²)) on the held-out set"""
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else 0.0
    return _clip01(1.0 - ss_res / ss_tot)


# ============================================================================
# ACCURACY POTENTIAL
# ============================================================================

class AccuracyPotential(Potential):
    """
    Train a learner on S, score it on a fixed held-out set.

    Degenerate training sets fall back to a constant predictor: the majority
    training label (ties → smallest label) for a single-class set, expected
    uniform-guess accuracy 1/n_classes for an empty set, and the training mean
    (0 when empty) for ridge with fewer than 2 points.
    """

    def __init__(self, learner, test_set: Dataset, n_classes: int = None):
        if len(test_set) == 0:
            raise DataError("empty test set")
        self.learner = learner
        self.test_set = test_set
        if isinstance(learner, RidgeLearner):
            if test_set.label_kind != LABEL_REAL:
                raise ConfigError("ridge potential needs a real-valued test set")
            self.metric = 'r2_clipped'
            self.n_classes = None
        else:
            if test_set.label_kind != LABEL_CATEGORICAL:
                raise ConfigError(f"{learner.kind} potential needs a categorical test set")
            self.metric = 'classification_accuracy'
            self.n_classes = max(test_set.n_classes or 1, n_classes or 1, 2)
        self.name = learner.kind

    def evaluate(self, train: Optional[Dataset]) -> float:
        if train is not None and len(train) and train.dimension != self.test_set.dimension:
            raise DataError(f"dimension mismatch: test set has {self.test_set.dimension}, "
                            f"training data {train.dimension}")
        if self.metric == 'r2_clipped':
            return self._evaluate_regression(train)
        return self._evaluate_classification(train)

    def _evaluate_classification(self, train: Optional[Dataset]) -> float:
        y_test = self.test_set.y
        if train is None or len(train) == 0:
            return 1.0 / self.n_classes
        train = train.canonical()
        labels = train.y.astype(np.int64)
        n_classes = max(self.n_classes, int(labels.max()) + 1)
        present = np.unique(labels)
        if present.shape[0] == 1:
            return accuracy(y_test, np.full(y_test.shape[0], present[0]))
        predictions = self.learner.fit_predict(train.X, labels, self.test_set.X, n_classes)
        return accuracy(y_test, predictions)

    def _evaluate_regression(self, train: Optional[Dataset]) -> float:
        y_test = self.test_set.y
        if train is None or len(train) == 0:
            return r2_clipped(y_test, np.zeros(y_test.shape[0]))
        train = train.canonical()
        if len(train) < 2:
            return r2_clipped(y_test, np.full(y_test.shape[0], train.y.mean()))
        predictions = self.learner.fit_predict(train.X, train.y, self.test_set.X)
        return r2_clipped(y_test, predictions)

    def describe(self) -> Dict:
        out = {'name': self.name, 'metric': self.metric, 'test_size': len(self.test_set)}
        out.update(self.learner.describe())
        return out


# ============================================================================
# DIAGNOSTIC POTENTIALS
# ============================================================================

class ConstantPotential(Potential):
    name = 'constant'

    def __init__(self, value: float = 0.5):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"constant potential value must be in [0, 1], got {value}")
        self.value = float(value)

    def evaluate(self, train: Optional[Dataset]) -> float:
        return self.value

    def describe(self) -> Dict:
        return {'name': self.name, 'value': self.value}


class AdditivePotential(Potential):
    """U(S) = min(1, Σ_{z∈S} c_z / total); c_z defaults to 1 for ids not in `weights`"""

    name = 'additive'

    def __init__(self, total: float, weights: Mapping[int, float] = None):
        if total <= 0:
            raise ConfigError(f"additive potential total must be > 0, got {total}")
        self.total = float(total)
        self.weights = dict(weights or {})
        if any(w < 0 for w in self.weights.values()):
            raise ConfigError("additive weights must be non-negative")

    @classmethod
    def normalized(cls, B: Dataset, weights: Mapping[int, float]) -> 'AdditivePotential':
        """Weights scaled so that U(B) = 1"""
        return cls(sum(weights[int(pid)] for pid in B.ids), weights)

    def evaluate(self, train: Optional[Dataset]) -> float:
        if train is None or len(train) == 0:
            return 0.0
        ordered = np.sort(train.ids)
        total = math.fsum(self.weights.get(int(pid), 1.0) for pid in ordered)
        return min(1.0, total / self.total)

    def describe(self) -> Dict:
        return {'name': self.name, 'total': self.total, 'n_weights': len(self.weights)}


class IndicatorPotential(Potential):
    """U(S) = 1 iff the target id is in S"""

    name = 'indicator'

    def __init__(self, target_id: int):
        self.target_id = int(target_id)

    def evaluate(self, train: Optional[Dataset]) -> float:
        if train is None or len(train) == 0:
            return 0.0
        return 1.0 if np.any(train.ids == self.target_id) else 0.0

    def describe(self) -> Dict:
        return {'name': self.name, 'target_id': self.target_id}


class MixturePotential(Potential):
    """Convex combination Σ a_i·U_i"""

    name = 'mixture'

    def __init__(self, potentials: Sequence[Potential], weights: Sequence[float]):
        if len(potentials) != len(weights) or not potentials:
            raise ConfigError("mixture needs one weight per potential")
        if any(w < 0 for w in weights) or abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be non-negative and sum to 1")
        self.potentials = list(potentials)
        self.weights = [float(w) for w in weights]

    def evaluate(self, train: Optional[Dataset]) -> float:
        return math.fsum(w * u.evaluate(train) for w, u in zip(self.weights, self.potentials))

    def describe(self) -> Dict:
        return {'name': self.name, 'parts': [u.describe() for u in self.potentials], 'weights': self.weights}


# ============================================================================
# STABILITY
# ============================================================================

def deletion_stability_probe(U: Potential, db: Dataset, k_values: Sequence[int], trials: int,
                             rng: RandomSource) -> np.ndarray:
    """
    Empirical stability profile: for each k, the largest |U(S∪{z}) − U(S)| seen
    over `trials` draws of S ~ db^{k−1} and z ~ db.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    if len(db) == 0:
        raise DataError("empty dataset")
    profile = np.zeros(len(k_values))
    for i, k in enumerate(k_values):
        if k < 1:
            raise ConfigError(f"k values must be >= 1, got {k}")
        worst = 0.0
        for trial in range(trials):
            gen = rng.stream(f'stability-{k}', trial)
            S = sample_subset(db, k - 1, gen)
            z = db.point(int(gen.integers(0, len(db))))
            worst = max(worst, abs(U.evaluate(S.with_point(z)) - U.evaluate(S)))
        profile[i] = worst
    return profile


def fit_stability_exponent(k_values: Sequence[int], profile: Sequence[float]) -> Tuple[float, float]:
    """
    Fit log max|Δ| ≈ a + slope·log k over the positive entries.
    Returns: (slope, b) with β(k) ≈ k^{−b}, b = −slope
    """
    k = np.asarray(k_values, dtype=float)
    p = np.asarray(profile, dtype=float)
    keep = p > 0
    if keep.sum() < 2:
        return float('-inf'), float('inf')
    fit = stats.linregress(np.log(k[keep]), np.log(p[keep]))
    return float(fit.slope), float(-fit.slope)


def suggest_schedule(m: int, b: float):
    """Importance schedule matched to a stability exponent (b clamped to >= 0.5)"""
    from .estimator import WeightSchedule
    return WeightSchedule.inverse_power(m, max(0.5, b))


# ============================================================================
# FACTORY
# ============================================================================

POTENTIAL_NAMES = ('mean', 'logistic', 'knn', 'ridge', 'constant', 'additive', 'indicator', 'mixture')

# Accepted hyperparameters per potential: key -> (kind, required)
POTENTIAL_PARAMS = {
    'mean': {'clip': ('bool', False)},
    'logistic': {'lr': ('positive', False), 'epochs': ('count', False), 'l2': ('non_negative', False)},
    'knn': {'k_neighbors': ('count', False)},
    'ridge': {'lambda': ('non_negative', False)},
    'constant': {'value': ('unit', False)},
    'additive': {'total': ('positive', False)},
    'indicator': {'target_id': ('integer', True)},
    'mixture': {'parts': ('parts', True), 'weights': ('weights', True)},
}

_KIND_TEXT = {
    'bool': 'a boolean',
    'positive': 'a number > 0',
    'non_negative': 'a number >= 0',
    'unit': 'a number in [0, 1]',
    'count': 'an integer >= 1',
    'integer': 'an integer',
}


def _is_real(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _param_ok(kind: str, value) -> bool:
    if kind == 'bool':
        return isinstance(value, bool)
    if kind == 'integer':
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == 'count':
        return isinstance(value, int) and not isinstance(value, bool) and value >= 1
    if not _is_real(value):
        return False
    if kind == 'positive':
        return value > 0
    if kind == 'non_negative':
        return value >= 0
    return 0.0 <= value <= 1.0


def check_potential_spec(spec: Mapping, field: str = 'potential') -> None:
    """
    Check a potential mapping against POTENTIAL_PARAMS. Raises ConfigError
    naming the offending key, e.g. 'potential.lr: must be a number > 0'.
    """
    if not isinstance(spec, Mapping):
        raise ConfigError(f"{field}: must be a mapping")
    name = spec.get('name')
    if name not in POTENTIAL_NAMES:
        raise ConfigError(f"{field}.name: must be one of {POTENTIAL_NAMES}, got {name!r}")
    allowed = POTENTIAL_PARAMS[name]
    for key in spec:
        if key != 'name' and key not in allowed:
            raise ConfigError(f"{field}.{key}: unknown parameter for potential '{name}' "
                              f"(accepted: {sorted(allowed)})")
    for key, (kind, required) in allowed.items():
        if key not in spec:
            if required:
                raise ConfigError(f"{field}.{key}: required for potential '{name}'")
            continue
        value = spec[key]
        if kind == 'parts':
            if not isinstance(value, list) or not value:
                raise ConfigError(f"{field}.parts: must be a non-empty list of potentials")
            for i, part in enumerate(value):
                check_potential_spec(part, f"{field}.parts[{i}]")
        elif kind == 'weights':
            if not isinstance(value, list) or not all(_is_real(w) and w >= 0 for w in value):
                raise ConfigError(f"{field}.weights: must be a list of numbers >= 0")
            if abs(math.fsum(value) - 1.0) > 1e-9:
                raise ConfigError(f"{field}.weights: must sum to 1, got {math.fsum(value)}")
        elif not _param_ok(kind, value):
            raise ConfigError(f"{field}.{key}: must be {_KIND_TEXT[kind]}, got {value!r}")
    if name == 'mixture' and len(spec['parts']) != len(spec['weights']):
        raise ConfigError(f"{field}.weights: need one weight per part "
                          f"({len(spec['weights'])} weights, {len(spec['parts'])} parts)")


def build_potential(spec: Mapping, db: Dataset = None, test_set: Dataset = None) -> Potential:
    """
    Build a potential from a config mapping: {name, ...hyperparameters}.
    See POTENTIAL_PARAMS for the accepted keys.
    """
    check_potential_spec(spec)
    name = spec['name']
    if name == 'constant':
        return ConstantPotential(float(spec.get('value', 0.5)))
    if name == 'additive':
        return AdditivePotential(float(spec.get('total', len(db) if db is not None else 1)))
    if name == 'indicator':
        return IndicatorPotential(spec['target_id'])
    if name == 'mixture':
        parts = [build_potential(part, db=db, test_set=test_set) for part in spec['parts']]
        # MixturePotential wants the weights to sum to 1 within 1e-12
        total = math.fsum(spec['weights'])
        return MixturePotential(parts, [float(w) / total for w in spec['weights']])
    if name == 'mean':
        if db is None:
            raise ConfigError("mean potential needs a database")
        return MeanEstimationPotential.from_database(db, clip=bool(spec.get('clip', False)))
    if test_set is None:
        raise ConfigError(f"potential '{name}' needs data.test_csv (or a synthetic test split)")
    if name == 'logistic':
        learner = LogisticLearner(float(spec.get('lr', DEFAULT_LR)), int(spec.get('epochs', DEFAULT_EPOCHS)),
                                  float(spec.get('l2', DEFAULT_L2)))
    elif name == 'knn':
        learner = KnnLearner(int(spec.get('k_neighbors', DEFAULT_NEIGHBORS)))
    else:
        learner = RidgeLearner(float(spec.get('lambda', DEFAULT_RIDGE_LAMBDA)))
    n_classes = db.n_classes if db is not None else None
    return AccuracyPotential(learner, test_set, n_classes=n_classes)


def potential_label_kind(name: str, spec: Optional[Mapping] = None) -> Optional[str]:
    """Label kind a potential expects from its data files (a mixture takes its parts')"""
    if name in ('logistic', 'knn'):
        return LABEL_CATEGORICAL
    if name == 'ridge':
        return LABEL_REAL
    if name == 'mixture' and spec:
        kinds = {potential_label_kind(part.get('name'), part) for part in spec.get('parts', [])} - {None}
        if len(kinds) > 1:
            raise ConfigError("potential.parts: parts need both categorical and real labels")
        return kinds.pop() if kinds else None
    return None
