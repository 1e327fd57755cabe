#!/usr/bin/env python3
"""
Core types for distributional data valuation
Datasets, the potential contract, seeded randomness and value tables shared by
every estimator, oracle and experiment in the package.
"""

import json
import math
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

LABEL_NONE = 'none'
LABEL_CATEGORICAL = 'categorical'
LABEL_REAL = 'real'
LABEL_KINDS = (LABEL_NONE, LABEL_CATEGORICAL, LABEL_REAL)

DEFAULT_WINDOW = 100


class DataError(ValueError):
    """Malformed, empty or mismatched data"""


class ConfigError(ValueError):
    """Invalid configuration or arguments"""


class InstanceTooLargeError(ConfigError):
    """Exact enumeration requested above the size cap"""


class InsufficientSamplesError(ValueError):
    """Not enough recorded iterations to answer a query"""


# ============================================================================
# DATA POINTS AND DATASETS
# ============================================================================

@dataclass(frozen=True, eq=False)
class DataPoint:
    features: np.ndarray
    label: Optional[float] = None
    id: int = 0

    @property
    def dimension(self) -> int:
        return int(self.features.shape[0])


class Dataset:
    """
    An ordered multiset of points stored column-wise.

    Rows may repeat (samples drawn with replacement keep the source id), so ids
    are only unique for datasets built from files or generators.
    """

    def __init__(self, features, labels=None, ids=None, label_kind: str = None,
                 n_classes: int = None):
        X = np.asarray(features, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DataError(f"features must be a 2-D array, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain NaN or Inf entries")

        n = X.shape[0]
        if ids is None:
            ids = np.arange(n, dtype=np.int64)
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.shape[0] != n:
            raise DataError(f"got {ids.shape[0]} ids for {n} points")
        if n and ids.min() < 0:
            raise DataError("ids must be non-negative")

        if labels is not None:
            labels = np.asarray(labels, dtype=float).reshape(-1)
            if labels.shape[0] != n:
                raise DataError(f"got {labels.shape[0]} labels for {n} points")
            if not np.all(np.isfinite(labels)):
                raise DataError("labels contain NaN or Inf entries")

        if label_kind is None:
            label_kind = LABEL_NONE if labels is None else infer_label_kind(labels)
        if label_kind not in LABEL_KINDS:
            raise DataError(f"unknown label kind '{label_kind}'")
        if label_kind == LABEL_NONE:
            labels = None
        elif labels is None:
            raise DataError(f"label kind '{label_kind}' needs labels")

        if label_kind == LABEL_CATEGORICAL:
            if n and (np.any(labels < 0) or np.any(labels != np.round(labels))):
                raise DataError("categorical labels must be non-negative integers")
            observed = int(labels.max()) + 1 if n else 0
            n_classes = max(observed, n_classes or 0, 1)
        else:
            n_classes = None

        self.X = X
        self.y = labels
        self.ids = ids
        self.label_kind = label_kind
        self.n_classes = n_classes

    @property
    def dimension(self) -> int:
        return int(self.X.shape[1])

    @property
    def points(self) -> List[DataPoint]:
        return list(iter(self))

    def __len__(self) -> int:
        return int(self.X.shape[0])

    def __iter__(self) -> Iterator[DataPoint]:
        for i in range(len(self)):
            yield self.point(i)

    def point(self, index: int) -> DataPoint:
        label = None if self.y is None else float(self.y[index])
        return DataPoint(features=self.X[index], label=label, id=int(self.ids[index]))

    def _like(self, X, y, ids) -> 'Dataset':
        return Dataset(X, y, ids, label_kind=self.label_kind, n_classes=self.n_classes)

    def take(self, indices) -> 'Dataset':
        """Rows at the given positions (repeats allowed)"""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        y = None if self.y is None else self.y[idx]
        return self._like(self.X[idx], y, self.ids[idx])

    def empty(self) -> 'Dataset':
        return self.take(np.zeros(0, dtype=np.int64))

    def concat(self, other: 'Dataset') -> 'Dataset':
        """Multiset union, self first"""
        if other.label_kind != self.label_kind:
            raise DataError(f"label kind mismatch: {self.label_kind} vs {other.label_kind}")
        if len(other) == 0:
            return self
        if len(self) == 0:
            return other
        if other.dimension != self.dimension:
            raise DataError(f"dimension mismatch: {self.dimension} vs {other.dimension}")
        X = np.vstack([self.X, other.X])
        y = None if self.y is None else np.concatenate([self.y, other.y])
        ids = np.concatenate([self.ids, other.ids])
        n_classes = max(self.n_classes or 0, other.n_classes or 0) or None
        return Dataset(X, y, ids, label_kind=self.label_kind, n_classes=n_classes)

    def with_point(self, z: DataPoint) -> 'Dataset':
        """S ∪ {z}"""
        if z.dimension != self.dimension:
            raise DataError(f"dimension mismatch: point has {z.dimension}, dataset {self.dimension}")
        X = np.vstack([self.X, z.features.reshape(1, -1)])
        y = None if self.y is None else np.append(self.y, z.label)
        ids = np.append(self.ids, z.id)
        return self._like(X, y, ids)

    def without_ids(self, ids: Iterable[int]) -> 'Dataset':
        drop = np.isin(self.ids, np.fromiter(ids, dtype=np.int64))
        return self.take(np.flatnonzero(~drop))

    def index_of(self, ids: Sequence[int]) -> np.ndarray:
        """Positions of the given ids (first occurrence)"""
        lookup = {}
        for pos, pid in enumerate(self.ids.tolist()):
            lookup.setdefault(pid, pos)
        missing = [pid for pid in ids if pid not in lookup]
        if missing:
            raise DataError(f"ids not in dataset: {missing[:5]}")
        return np.array([lookup[pid] for pid in ids], dtype=np.int64)

    def canonical(self) -> 'Dataset':
        """
        Same multiset in a fixed row order (id, then label, then features).

        Potentials train on the canonical order, so evaluate() is bit-for-bit
        invariant under any reordering of its input.
        """
        if len(self) < 2:
            return self
        keys = [self.X[:, j] for j in range(self.dimension - 1, -1, -1)]
        if self.y is not None:
            keys.append(self.y)
        keys.append(self.ids)
        order = np.lexsort(keys)
        return self.take(order)

    def __repr__(self) -> str:
        return (f"Dataset(n={len(self)}, d={self.dimension}, labels={self.label_kind}"
                + (f"[{self.n_classes}]" if self.n_classes else "") + ")")


def infer_label_kind(labels) -> str:
    labels = np.asarray(labels, dtype=float)
    if labels.size and np.all(labels >= 0) and np.all(labels == np.round(labels)):
        return LABEL_CATEGORICAL
    return LABEL_REAL


def points_to_dataset(points: Sequence[DataPoint], label_kind: str = None,
                      n_classes: int = None, dimension: int = None) -> Dataset:
    """Build a Dataset from DataPoint objects"""
    if not points:
        labels = None if label_kind in (None, LABEL_NONE) else np.zeros(0)
        return Dataset(np.zeros((0, dimension or 1)), labels, np.zeros(0, dtype=np.int64),
                       label_kind=label_kind or LABEL_NONE, n_classes=n_classes)
    X = np.vstack([p.features for p in points])
    has_labels = points[0].label is not None
    y = [p.label for p in points] if has_labels else None
    ids = [p.id for p in points]
    return Dataset(X, y, ids, label_kind=label_kind, n_classes=n_classes)


def read_dataset_csv(path: str, label_kind: str = None) -> Dataset:
    """
    Load a dataset CSV: header f0..f{d-1}, optional final `label` column,
    optional `id` column (defaults to row order).
    """
    try:
        frame = pd.read_csv(path, encoding='utf-8')
    except FileNotFoundError:
        raise DataError(f"dataset not found: {path}")
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise DataError(f"could not parse {path}: {e}")

    feature_cols = [c for c in frame.columns if c not in ('label', 'id')]
    expected = [f"f{j}" for j in range(len(feature_cols))]
    if feature_cols != expected:
        raise DataError(f"{path}: feature columns must be {expected[:3]}..., got {feature_cols[:3]}...")
    if not len(frame):
        raise DataError(f"{path}: empty dataset")

    try:
        X = frame[feature_cols].to_numpy(dtype=float)
    except ValueError as e:
        raise DataError(f"{path}: non-numeric feature value ({e})")
    labels = frame['label'].to_numpy(dtype=float) if 'label' in frame.columns else None
    ids = frame['id'].to_numpy(dtype=np.int64) if 'id' in frame.columns else None
    if ids is not None and len(np.unique(ids)) != len(ids):
        raise DataError(f"{path}: duplicate ids")
    if labels is None:
        label_kind = LABEL_NONE
    return Dataset(X, labels, ids, label_kind=label_kind)


def write_dataset_csv(data: Dataset, path: str, include_ids: bool = False):
    columns = {f"f{j}": data.X[:, j] for j in range(data.dimension)}
    frame = pd.DataFrame(columns)
    if include_ids:
        frame.insert(0, 'id', data.ids)
    if data.y is not None:
        frame['label'] = data.y.astype(np.int64) if data.label_kind == LABEL_CATEGORICAL else data.y
    frame.to_csv(path, index=False, lineterminator='\n', encoding='utf-8')


# ============================================================================
# STANDARDIZATION AND SAMPLING
# ============================================================================

def standardize(data: Dataset) -> Tuple[Dataset, np.ndarray, np.ndarray]:
    """
    Scale every feature column to mean 0 / population stddev 1.
    Returns: (standardized data, column means, column scales)
    """
    if len(data) == 0:
        raise DataError("empty dataset")
    mean = data.X.mean(axis=0)
    std = data.X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return apply_standardization(data, mean, std), mean, std


def apply_standardization(data: Dataset, mean: np.ndarray, std: np.ndarray) -> Dataset:
    """Map data with a frozen standardize() transform"""
    X = (data.X - mean) / std
    return Dataset(X, data.y, data.ids, label_kind=data.label_kind, n_classes=data.n_classes)


def sample_subset(db: Dataset, k: int, rng) -> Dataset:
    """k i.i.d. uniform draws from db with replacement"""
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    if k == 0:
        return db.empty()
    if len(db) == 0:
        raise DataError("cannot sample from an empty dataset")
    gen = rng.generator() if isinstance(rng, RandomSource) else rng
    return db.take(gen.integers(0, len(db), size=k))


# ============================================================================
# RANDOMNESS
# ============================================================================

class RandomSource:
    """
    Seeded, splittable random streams.

    Each (purpose, t) pair maps to its own Philox stream derived through
    SeedSequence, so results never depend on the order in which streams are used.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    @staticmethod
    def purpose_key(purpose: str) -> int:
        return zlib.crc32(purpose.encode('utf-8'))

    def stream(self, purpose: str, t: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.purpose_key(purpose), int(t)))
        return np.random.Generator(np.random.Philox(seq))

    def generator(self) -> np.random.Generator:
        return self.stream('default')

    def child(self, purpose: str, t: int = 0) -> 'RandomSource':
        """A new RandomSource whose seed is drawn from (purpose, t)"""
        return RandomSource(int(self.stream(purpose, t).integers(0, 2**63 - 1)))

    def integers(self, low: int, high: int, size=None, purpose: str = 'default', t: int = 0):
        return self.stream(purpose, t).integers(low, high, size=size)

    def uniform(self, size=None, purpose: str = 'default', t: int = 0):
        return self.stream(purpose, t).random(size=size)

    def categorical(self, probabilities, size=None, purpose: str = 'default', t: int = 0):
        p = np.asarray(probabilities, dtype=float)
        return self.stream(purpose, t).choice(len(p), size=size, p=p)

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed})"


# ============================================================================
# POTENTIALS
# ============================================================================

class Potential:
    """
    A set function U: finite multisets of points -> [0, 1].

    Subclasses implement evaluate() deterministically and independently of row
    order; they are treated as immutable and shared read-only across workers.
    """

    name = 'potential'

    @property
    def empty_value(self) -> float:
        """U(∅)"""
        return self.evaluate(None)

    def evaluate(self, train: Optional[Dataset]) -> float:
        raise NotImplementedError

    def __call__(self, train: Optional[Dataset]) -> float:
        return self.evaluate(train)

    def describe(self) -> Dict:
        return {'name': self.name}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.describe()})"


# ============================================================================
# VALUE TABLES
# ============================================================================

@dataclass
class ValueEstimate:
    mean: float = 0.0
    count: int = 0
    history_tail: deque = field(default_factory=lambda: deque(maxlen=DEFAULT_WINDOW))
    stderr: float = float('nan')
    interpolated: bool = False

    def update(self, x: float):
        """val ← (1/t)·x + ((t−1)/t)·val"""
        t = self.count + 1
        new = (1.0 / t) * x + ((t - 1) / t) * self.mean
        self.history_tail.append(abs(new - self.mean))
        self.mean = new
        self.count = t


class ValueTable:
    """
    Running-mean value estimates for a set of point ids.

    State is kept column-wise so one iteration updates every estimate with a
    single vectorized step; `entries` gives the per-point ValueEstimate view.
    """

    def __init__(self, ids: Sequence[int], m: int, seed: int, schedule_name: str,
                 window: int = DEFAULT_WINDOW):
        ids = [int(i) for i in ids]
        if len(set(ids)) != len(ids):
            raise DataError("value table ids must be unique")
        self.ids = np.array(ids, dtype=np.int64)
        self.m = int(m)
        self.seed = int(seed)
        self.schedule_name = schedule_name
        self.window = int(window)
        n = len(ids)
        self.means = np.zeros(n)
        self._m2 = np.zeros(n)
        self.count = 0
        self._history = np.zeros((self.window, n))
        self._history_pos = 0
        self.interpolated = np.zeros(n, dtype=bool)
        self.converged = False
        self.cost = 0
        self.records = None
        self.estimated_ids = self.ids.copy()
        self.warnings: List[str] = []
        self.config: Dict = {}

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def update(self, samples: np.ndarray):
        """Fold one iteration's (reweighted) samples, one per id, in id order"""
        x = np.asarray(samples, dtype=float)
        t = self.count + 1
        new = (1.0 / t) * x + ((t - 1) / t) * self.means
        self._history[self._history_pos % self.window] = np.abs(new - self.means)
        self._history_pos += 1
        # Welford second moment for standard errors
        delta_old = x - self.means
        self._m2 = self._m2 + delta_old * (x - new)
        self.means = new
        self.count = t

    def recent_changes(self) -> np.ndarray:
        """|val_{t+1} − val_t| over the last min(count, window) iterations"""
        filled = min(self._history_pos, self.window)
        if filled < self.window:
            return self._history[:filled]
        start = self._history_pos % self.window
        return np.roll(self._history, -start, axis=0)

    @property
    def stderrs(self) -> np.ndarray:
        if self.count < 2:
            return np.full(len(self), np.nan if self.count == 0 else 0.0)
        variance = self._m2 / (self.count - 1)
        out = np.sqrt(np.maximum(variance, 0.0) / self.count)
        out[self.interpolated] = np.nan
        return out

    @property
    def entries(self) -> Dict[int, ValueEstimate]:
        changes = self.recent_changes()
        stderrs = self.stderrs
        out = {}
        for j, pid in enumerate(self.ids.tolist()):
            tail = deque(changes[:, j].tolist(), maxlen=self.window)
            out[pid] = ValueEstimate(mean=float(self.means[j]), count=self.count, history_tail=tail,
                                     stderr=float(stderrs[j]), interpolated=bool(self.interpolated[j]))
        return out

    def value(self, pid: int) -> float:
        return float(self.means[self.position(pid)])

    def position(self, pid: int) -> int:
        hits = np.flatnonzero(self.ids == pid)
        if not hits.size:
            raise DataError(f"id {pid} not in value table")
        return int(hits[0])

    def values_for(self, ids: Sequence[int]) -> np.ndarray:
        lookup = {pid: j for j, pid in enumerate(self.ids.tolist())}
        missing = [pid for pid in ids if pid not in lookup]
        if missing:
            raise DataError(f"value table is missing ids {missing[:5]}")
        return self.means[[lookup[pid] for pid in ids]]

    def as_dict(self) -> Dict[int, float]:
        return {pid: float(v) for pid, v in zip(self.ids.tolist(), self.means)}

    def set_interpolated(self, ids: Sequence[int], values: Sequence[float]) -> 'ValueTable':
        """A table with the given ids appended as interpolated entries"""
        out = ValueTable(list(self.ids) + list(ids), self.m, self.seed, self.schedule_name, self.window)
        out.means = np.concatenate([self.means, np.asarray(values, dtype=float)])
        out._m2 = np.concatenate([self._m2, np.zeros(len(ids))])
        out.count = self.count
        out._history = np.hstack([self._history, np.zeros((self.window, len(ids)))])
        out._history_pos = self._history_pos
        out.interpolated = np.concatenate([self.interpolated, np.ones(len(ids), dtype=bool)])
        out.converged = self.converged
        out.cost = self.cost
        out.records = self.records
        out.estimated_ids = self.estimated_ids
        out.warnings = list(self.warnings)
        out.config = dict(self.config)
        order = np.argsort(out.ids, kind='stable')
        if np.any(order != np.arange(len(out.ids))):
            out._reorder(order)
        return out

    def _reorder(self, order: np.ndarray):
        self.ids = self.ids[order]
        self.means = self.means[order]
        self._m2 = self._m2[order]
        self._history = self._history[:, order]
        self.interpolated = self.interpolated[order]

    def prefix(self, m_prime: int, schedule) -> 'ValueTable':
        from .estimator import prefix_values
        if self.records is None:
            raise InsufficientSamplesError("run was made without recorded cardinalities")
        return prefix_values(self.records, m_prime, schedule, ids=self.estimated_ids,
                             window=self.window, seed=self.seed)

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'id': self.ids,
            'value': self.means,
            'count': np.full(len(self), self.count, dtype=np.int64),
            'interpolated': self.interpolated.astype(np.int64),
        })

    def sidecar(self) -> Dict:
        meta = {
            'seed': self.seed,
            'm': self.m,
            'schedule': self.schedule_name,
            'iterations': self.count,
            'converged': bool(self.converged),
            'cost': int(self.cost),
            'n_points': len(self),
            'n_interpolated': int(self.interpolated.sum()),
            'warnings': list(self.warnings),
        }
        meta.update(self.config)
        return meta

    def write(self, csv_path: str, json_path: str = None, extra: Dict = None):
        """Write the value CSV and its JSON sidecar"""
        self.to_frame().to_csv(csv_path, index=False, lineterminator='\n', encoding='utf-8')
        if json_path:
            meta = self.sidecar()
            if extra:
                meta.update(extra)
            with open(json_path, 'w', encoding='utf-8') as f:
                json.dump(meta, f, indent=2, sort_keys=True, default=json_default)
                f.write('\n')

    @classmethod
    def read(cls, csv_path: str, json_path: str = None) -> 'ValueTable':
        try:
            frame = pd.read_csv(csv_path, encoding='utf-8')
        except FileNotFoundError:
            raise DataError(f"value table not found: {csv_path}")
        for column in ('id', 'value', 'count', 'interpolated'):
            if column not in frame.columns:
                raise DataError(f"{csv_path}: missing column '{column}'")
        meta = {}
        if json_path:
            with open(json_path, 'r', encoding='utf-8') as f:
                meta = json.load(f)
        table = cls(frame['id'].tolist(), meta.get('m', 0), meta.get('seed', 0),
                    meta.get('schedule', 'unknown'))
        table.means = frame['value'].to_numpy(dtype=float)
        table.count = int(frame['count'].max()) if len(frame) else 0
        table.interpolated = frame['interpolated'].to_numpy(dtype=np.int64).astype(bool)
        table.converged = bool(meta.get('converged', False))
        table.cost = int(meta.get('cost', 0))
        return table

    def __repr__(self) -> str:
        return (f"ValueTable(n={len(self)}, m={self.m}, T={self.count}, "
                f"schedule={self.schedule_name}, converged={self.converged})")


def json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def combined_stderr(*stderrs: float) -> float:
    return math.sqrt(sum(s * s for s in stderrs))
