#!/usr/bin/env python3
"""
Distributional Shapley estimators
D-Shapley (uniform cardinalities) and Fast-D-Shapley (importance-weighted
cardinalities, subsampling with interpolation) as running means of marginal
contributions to one shared random subset per iteration.

Usage:
    config = EstimatorConfig(m=50, T_max=2000, schedule=WeightSchedule.uniform(50), seed=7)
    table = d_shapley(Z, db, U, config)
    fast = fast_d_shapley(Z, db, U, config.with_schedule(WeightSchedule.inverse_power(50, 1.0)),
                          subsample_p=0.3, interpolator=ValueInterpolator(k_neighbors=5))
"""

import math
import multiprocessing as mp
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .core import (DEFAULT_WINDOW, ConfigError, DataError, Dataset, InsufficientSamplesError,
                   Potential, RandomSource, ValueTable, sample_subset)

SCHEDULE_UNIFORM = 'uniform'
SCHEDULE_INVERSE_POWER = 'inverse_power'
DENOMINATOR_FLOOR = 1e-12


# ============================================================================
# CARDINALITY SCHEDULES
# ============================================================================

@dataclass(frozen=True)
class WeightSchedule:
    """Sampling distribution over cardinalities k ∈ {1..m}"""
    m: int
    kind: str
    b: Optional[float]
    weights: np.ndarray = field(repr=False)

    @classmethod
    def uniform(cls, m: int) -> 'WeightSchedule':
        if m < 1:
            raise ConfigError(f"estimator.m must be >= 1, got {m}")
        return cls(m=m, kind=SCHEDULE_UNIFORM, b=None, weights=np.full(m, 1.0 / m))

    @classmethod
    def inverse_power(cls, m: int, b: float = 1.0) -> 'WeightSchedule':
        """w_k ∝ k^{1−2b}; b = 1 gives w_k ∝ 1/k"""
        if m < 1:
            raise ConfigError(f"estimator.m must be >= 1, got {m}")
        if b < 0.5:
            raise ConfigError(f"estimator.schedule.b must be >= 0.5, got {b}")
        raw = np.arange(1, m + 1, dtype=float) ** (1.0 - 2.0 * b)
        return cls(m=m, kind=SCHEDULE_INVERSE_POWER, b=float(b), weights=raw / math.fsum(raw))

    @classmethod
    def from_spec(cls, m: int, kind: str, b: float = None) -> 'WeightSchedule':
        if kind == SCHEDULE_UNIFORM:
            return cls.uniform(m)
        if kind == SCHEDULE_INVERSE_POWER:
            return cls.inverse_power(m, 1.0 if b is None else b)
        raise ConfigError(f"estimator.schedule.kind must be 'uniform' or 'inverse_power', got {kind!r}")

    @property
    def name(self) -> str:
        if self.kind == SCHEDULE_UNIFORM:
            return SCHEDULE_UNIFORM
        return f"{SCHEDULE_INVERSE_POWER}(b={self.b:g})"

    @property
    def is_uniform(self) -> bool:
        return self.kind == SCHEDULE_UNIFORM

    def sample(self, gen: np.random.Generator) -> int:
        if self.is_uniform:
            return int(gen.integers(1, self.m + 1))
        return int(gen.choice(self.m, p=self.weights)) + 1

    def reweight(self, k: int) -> float:
        """1/(w_k·m); exactly 1 for the uniform schedule"""
        if self.is_uniform:
            return 1.0
        return 1.0 / (self.weights[k - 1] * self.m)

    def conditional(self, m_prime: int) -> 'WeightSchedule':
        """Schedule restricted to k <= m′ and renormalized"""
        if not 1 <= m_prime <= self.m:
            raise ConfigError(f"m′ must be in [1, {self.m}], got {m_prime}")
        if m_prime == self.m:
            return self
        if self.is_uniform:
            return WeightSchedule.uniform(m_prime)
        head = self.weights[:m_prime]
        return WeightSchedule(m=m_prime, kind=self.kind, b=self.b, weights=head / math.fsum(head))

    def with_horizon(self, m: int) -> 'WeightSchedule':
        """Same family and exponent over cardinalities {1..m}"""
        if m == self.m:
            return self
        if self.is_uniform:
            return WeightSchedule.uniform(m)
        return WeightSchedule.inverse_power(m, self.b)

    def expected_cardinality(self) -> float:
        return float(np.dot(np.arange(1, self.m + 1), self.weights))

    def describe(self) -> dict:
        return {'kind': self.kind, 'b': self.b, 'm': self.m}


# ============================================================================
# CONFIG AND RECORDS
# ============================================================================

@dataclass
class EstimatorConfig:
    m: int
    T_max: int
    schedule: WeightSchedule = None
    window: int = DEFAULT_WINDOW
    threshold: float = 0.01
    seed: int = 0
    record_cardinalities: bool = True
    workers: int = 1
    verbose: bool = False

    def __post_init__(self):
        if self.schedule is None:
            self.schedule = WeightSchedule.uniform(self.m)
        self.validate()

    def validate(self):
        if self.m < 1:
            raise ConfigError(f"estimator.m must be >= 1, got {self.m}")
        if self.schedule.m != self.m:
            raise ConfigError(f"schedule horizon {self.schedule.m} does not match estimator.m {self.m}")
        if self.window < 1:
            raise ConfigError(f"estimator.window must be >= 1, got {self.window}")
        if self.T_max < self.window:
            raise ConfigError(f"estimator.T_max ({self.T_max}) must be >= estimator.window ({self.window})")
        if not 0.0 <= self.threshold < 1.0:
            raise ConfigError(f"estimator.threshold must be in [0, 1), got {self.threshold}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    def with_schedule(self, schedule: WeightSchedule) -> 'EstimatorConfig':
        return replace(self, schedule=schedule)

    def describe(self) -> dict:
        return {
            'm': self.m, 'T_max': self.T_max, 'schedule': self.schedule.describe(),
            'window': self.window, 'threshold': self.threshold, 'seed': self.seed,
        }


@dataclass
class IterationRecord:
    t: int
    k: int
    contributions: np.ndarray


# ============================================================================
# STOPPING RULE
# ============================================================================

def stopping_rule(table: ValueTable, window: int, threshold: float) -> bool:
    """
    True once the mean |val_{t+1}(z) − val_t(z)| over all z and the last `window`
    iterations drops below threshold × mean_z |val(z)|.

    A window where every change is exactly 0 counts as converged; threshold 0
    disables the rule.
    """
    if threshold <= 0 or table.count < window:
        return False
    changes = table.recent_changes()[-window:]
    if not np.any(changes):
        return True
    denominator = max(float(np.mean(np.abs(table.means))), DENOMINATOR_FLOOR)
    return float(np.mean(changes)) < threshold * denominator


# ============================================================================
# ESTIMATION LOOP
# ============================================================================

def _contributions_chunk(args):
    U, S, base, Z_chunk = args
    return np.array([U.evaluate(S.with_point(z)) - base for z in Z_chunk.points])


def _marginal_contributions(U: Potential, S: Dataset, Z: Dataset, pool, workers: int) -> np.ndarray:
    """Δ_zU(S) for every z in Z, in Z's row order"""
    base = U.evaluate(S)
    if pool is None or len(Z) < 2:
        return _contributions_chunk((U, S, base, Z))
    chunks = np.array_split(np.arange(len(Z)), min(workers, len(Z)))
    parts = pool.map(_contributions_chunk, [(U, S, base, Z.take(c)) for c in chunks])
    return np.concatenate(parts)


def _estimate(Z: Dataset, db: Dataset, U: Potential, config: EstimatorConfig,
              rng: RandomSource) -> ValueTable:
    schedule = config.schedule
    table = ValueTable(Z.ids, config.m, config.seed, schedule.name, config.window)
    table.config = {'estimator': config.describe(), 'potential': U.describe()}
    records: Optional[List[IterationRecord]] = [] if config.record_cardinalities else None
    n_z = len(Z)

    if config.verbose:
        print(f"🚀 Estimating values for {n_z} points (m={config.m}, schedule={schedule.name}, "
              f"T_max={config.T_max})")

    pool = mp.Pool(config.workers) if config.workers > 1 and n_z > 1 else None
    try:
        for t in range(1, config.T_max + 1):
            k = schedule.sample(rng.stream('cardinality', t))
            S = sample_subset(db, k - 1, rng.stream('subset', t))
            delta = _marginal_contributions(U, S, Z, pool, config.workers)
            table.update(delta * schedule.reweight(k))
            table.cost += (k - 1) + n_z * k
            if records is not None:
                records.append(IterationRecord(t=t, k=k, contributions=delta))
            if stopping_rule(table, config.window, config.threshold):
                table.converged = True
                break
            if config.verbose and t % 1000 == 0:
                print(f"  📊 iteration {t}: mean |val| = {np.mean(np.abs(table.means)):.6f}")
    finally:
        if pool is not None:
            pool.close()
            pool.join()

    table.records = records
    if config.verbose:
        status = "converged" if table.converged else "hit T_max"
        print(f"✅ {status} after {table.count} iterations (cost {table.cost:,} training points)")
    return table


def _check_inputs(Z: Dataset, db: Dataset):
    if len(Z) == 0:
        raise DataError("no points to valuate")
    if len(db) == 0:
        raise DataError("empty database")
    if Z.dimension != db.dimension:
        raise DataError(f"dimension mismatch: valuation set {Z.dimension}, database {db.dimension}")


def d_shapley(Z: Dataset, db: Dataset, U: Potential, config: EstimatorConfig) -> ValueTable:
    """
    Running mean of U(S_t ∪ {z}) − U(S_t) with k ~ uniform[m] and S_t ~ db^{k−1},
    sharing S_t across all z in an iteration.
    """
    if not config.schedule.is_uniform:
        raise ConfigError("non-uniform schedule: use fast_d_shapley")
    return fast_d_shapley(Z, db, U, config, subsample_p=1.0)


def subsample(Z: Dataset, p: float, rng: RandomSource) -> np.ndarray:
    """
    Positions kept when each point survives independently with probability p.
    An empty draw falls back to max(1, ⌈p·|Z|⌉) points chosen uniformly.
    """
    if not 0.0 < p <= 1.0:
        raise ConfigError(f"estimator.subsample_p must be in (0, 1], got {p}")
    if p == 1.0:
        return np.arange(len(Z))
    keep = np.flatnonzero(rng.stream('subsample').random(len(Z)) < p)
    if keep.size == 0:
        forced = max(1, math.ceil(p * len(Z)))
        keep = np.sort(rng.stream('subsample-fallback').permutation(len(Z))[:forced])
    return keep


def fast_d_shapley(Z: Dataset, db: Dataset, U: Potential, config: EstimatorConfig,
                   subsample_p: float = 1.0, interpolator=None) -> ValueTable:
    """
    Importance-weighted estimator: k ~ w, each sample reweighted by 1/(w_k·m),
    estimates only a p-subsample of Z and optionally interpolates the rest.

    Returns a table over Z_p, or over all of Z when an interpolator is given.
    """
    _check_inputs(Z, db)
    rng = RandomSource(config.seed)
    keep = subsample(Z, subsample_p, rng)
    Z_p = Z.take(keep)
    table = _estimate(Z_p, db, U, config, rng)
    table.config['subsample_p'] = subsample_p

    if interpolator is None or len(Z_p) == len(Z):
        return table

    fitted = interpolator.fit(list(zip(Z_p.points, table.means.tolist())), n_classes=Z.n_classes,
                               label_kind=Z.label_kind)
    rest = np.setdiff1d(np.arange(len(Z)), keep)
    Z_rest = Z.take(rest)
    predicted = fitted.predict_many(Z_rest)
    out = table.set_interpolated(Z_rest.ids.tolist(), predicted)
    out.warnings.extend(fitted.warnings)
    if config.verbose:
        print(f"  📊 interpolated {len(Z_rest)} of {len(Z)} values from {len(Z_p)} estimates")
        for warning in fitted.warnings:
            print(f"  ⚠️  {warning}")
    return out


# ============================================================================
# PREFIX EXTRACTION
# ============================================================================

def prefix_values(records: Sequence[IterationRecord], m_prime: int, schedule: WeightSchedule,
                  ids: Sequence[int] = None, window: int = DEFAULT_WINDOW, seed: int = 0) -> ValueTable:
    """
    Re-estimate values for horizon m′ <= m from a recorded run, keeping only
    iterations with k <= m′ and reweighting by the conditional schedule.
    """
    if m_prime < 1:
        raise ConfigError(f"m′ must be >= 1, got {m_prime}")
    if not records:
        raise InsufficientSamplesError("insufficient samples for m′")
    conditional = schedule.conditional(m_prime)
    if ids is None:
        ids = range(len(records[0].contributions))
    table = ValueTable(list(ids), m_prime, seed, conditional.name, window)
    for record in records:
        if record.k <= m_prime:
            table.update(record.contributions * conditional.reweight(record.k))
    if table.count == 0:
        raise InsufficientSamplesError("insufficient samples for m′")
    table.config = {'prefix_of': schedule.m}
    return table


# ============================================================================
# GUIDANCE
# ============================================================================

def iteration_bound(n_points: int, eps: float, delta: float, m: int, schedule: WeightSchedule = None,
                    beta=None) -> int:
    """
    Iteration count suggested by log(|Z|/δ)/(ε²m²)·Σ_k β(k)²/w_k with unit constant.

    beta is a callable k -> β(k) (defaults to 1, the trivial bound); with the
    uniform schedule and β ≡ 1 this reduces to log(|Z|/δ)/ε². Guidance only.
    """
    if eps <= 0 or not 0 < delta < 1:
        raise ConfigError("iteration_bound needs eps > 0 and delta in (0, 1)")
    schedule = schedule or WeightSchedule.uniform(m)
    beta = beta or (lambda k: 1.0)
    spread = math.fsum(beta(k) ** 2 / schedule.weights[k - 1] for k in range(1, m + 1))
    return int(math.ceil(math.log(max(n_points, 1) / delta) / (eps ** 2 * m ** 2) * spread))
