#!/usr/bin/env python3
"""
Exact valuation oracles
Data Shapley by full subset enumeration (with a per-bitmask potential cache),
the permutation-average form for tiny sets, a brute-force Monte Carlo oracle
for distributional values, and the Shapley axiom suite driven by `verify`.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (LABEL_CATEGORICAL, ConfigError, DataError, DataPoint, Dataset,
                   InstanceTooLargeError, Potential, RandomSource, sample_subset)
from .potentials import (AccuracyPotential, AdditivePotential, IndicatorPotential, KnnLearner,
                         LogisticLearner, MeanEstimationPotential, MixturePotential)

PERMUTATION_MAX_N = 6
DEFAULT_TOLERANCE = 1e-9


@dataclass
class ExactConfig:
    max_n: int = 12
    mc_oracle_draws: int = 200000
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.max_n < 1:
            raise ConfigError(f"exact.max_n must be >= 1, got {self.max_n}")
        if self.mc_oracle_draws < 1:
            raise ConfigError(f"exact.mc_oracle_draws must be >= 1, got {self.mc_oracle_draws}")
        if not math.isfinite(self.tolerance):
            raise ConfigError(f"exact.tolerance must be finite, got {self.tolerance}")


# ============================================================================
# SUBSET ENUMERATION
# ============================================================================

class SubsetCache:
    """U(S) for subsets of B keyed by bitmask, each evaluated at most once"""

    def __init__(self, B: Dataset, U: Potential):
        self.B = B
        self.U = U
        self._values: Dict[int, float] = {}

    def __call__(self, mask: int) -> float:
        if mask not in self._values:
            if mask == 0:
                self._values[mask] = self.U.evaluate(None)
            else:
                members = [i for i in range(len(self.B)) if mask >> i & 1]
                self._values[mask] = self.U.evaluate(self.B.take(members))
        return self._values[mask]

    @property
    def evaluations(self) -> int:
        return len(self._values)


def _check_size(B: Dataset, limit: int):
    if len(B) == 0:
        raise DataError("empty dataset")
    if len(B) > limit:
        raise InstanceTooLargeError("instance too large for enumeration")


def exact_data_shapley_all(B: Dataset, U: Potential, config: ExactConfig = None,
                           cache: SubsetCache = None) -> np.ndarray:
    """
    sh(z; U, B) for every row of B:
    (1/n) Σ_k 1/C(n−1, k−1) Σ_{S ⊆ B∖{z}, |S|=k−1} [U(S∪{z}) − U(S)]
    """
    config = config or ExactConfig()
    _check_size(B, config.max_n)
    n = len(B)
    cache = cache or SubsetCache(B, U)
    size_weight = [1.0 / (n * math.comb(n - 1, s)) for s in range(n)]
    terms: List[List[float]] = [[] for _ in range(n)]
    for mask in range(1 << n):
        u_mask = cache(mask)
        size = bin(mask).count('1')
        for i in range(n):
            if mask >> i & 1:
                continue
            terms[i].append(size_weight[size] * (cache(mask | 1 << i) - u_mask))
    return np.array([math.fsum(t) for t in terms])


def exact_data_shapley(z_index: int, B: Dataset, U: Potential, config: ExactConfig = None) -> float:
    config = config or ExactConfig()
    _check_size(B, config.max_n)
    if not 0 <= z_index < len(B):
        raise DataError(f"z_index {z_index} out of range for {len(B)} points")
    n = len(B)
    cache = SubsetCache(B, U)
    others = [i for i in range(n) if i != z_index]
    terms = []
    for size in range(n):
        weight = 1.0 / (n * math.comb(n - 1, size))
        for combo in itertools.combinations(others, size):
            mask = sum(1 << i for i in combo)
            terms.append(weight * (cache(mask | 1 << z_index) - cache(mask)))
    return math.fsum(terms)


def permutation_data_shapley(B: Dataset, U: Potential, cache: SubsetCache = None) -> np.ndarray:
    """Average marginal contribution to predecessors over all n! orderings"""
    _check_size(B, PERMUTATION_MAX_N)
    n = len(B)
    cache = cache or SubsetCache(B, U)
    terms: List[List[float]] = [[] for _ in range(n)]
    for order in itertools.permutations(range(n)):
        mask = 0
        for i in order:
            terms[i].append(cache(mask | 1 << i) - cache(mask))
            mask |= 1 << i
    total = math.factorial(n)
    return np.array([math.fsum(t) / total for t in terms])


def exact_efficiency_check(B: Dataset, U: Potential, config: ExactConfig = None) -> Tuple[float, float]:
    """Returns (Σ sh(z), U(B) − U(∅))"""
    config = config or ExactConfig()
    cache = SubsetCache(B, U)
    values = exact_data_shapley_all(B, U, config, cache=cache)
    return math.fsum(values), cache((1 << len(B)) - 1) - cache(0)


# ============================================================================
# DISTRIBUTIONAL ORACLES
# ============================================================================

def _mean_and_stderr(samples: np.ndarray) -> Tuple[float, float]:
    mean = math.fsum(samples) / samples.shape[0]
    if samples.shape[0] < 2:
        return mean, 0.0
    return mean, float(np.std(samples, ddof=1) / math.sqrt(samples.shape[0]))


def oracle_distributional_value(z: DataPoint, db: Dataset, U: Potential, m: int, draws: int,
                                rng: RandomSource) -> Tuple[float, float]:
    """
    Brute-force Monte Carlo value: mean of U(S∪{z}) − U(S) over independent draws
    with k ~ uniform[m] and S ~ db^{k−1}. Returns (mean, stderr).
    """
    if draws < 1 or m < 1:
        raise ConfigError("oracle needs draws >= 1 and m >= 1")
    samples = np.empty(draws)
    for i in range(draws):
        gen = rng.stream('oracle', i)
        k = int(gen.integers(1, m + 1))
        S = sample_subset(db, k - 1, gen)
        samples[i] = U.evaluate(S.with_point(z)) - U.evaluate(S)
    return _mean_and_stderr(samples)


def resampled_exact_value(z: DataPoint, db: Dataset, U: Potential, m: int, resamples: int,
                          rng: RandomSource, config: ExactConfig = None) -> Tuple[float, float]:
    """
    Mean of sh(z; U, B ∪ {z}) over B ~ db^{m−1}: the distributional value by its
    definition, evaluated with exact enumeration inside each draw.
    """
    config = config or ExactConfig()
    if m > config.max_n:
        raise InstanceTooLargeError("instance too large for enumeration")
    samples = np.empty(resamples)
    for i in range(resamples):
        B = sample_subset(db, m - 1, rng.stream('resample', i)).with_point(z)
        samples[i] = exact_data_shapley(len(B) - 1, B, U, config)
    return _mean_and_stderr(samples)


def expected_efficiency_check(db: Dataset, U: Potential, m: int, draws: int,
                              rng: RandomSource) -> Dict[str, float]:
    """
    On-average efficiency: E_z[val(z)] against (E_{B~D^m}[U(B)] − U(∅)) / m,
    both sides estimated by Monte Carlo with their standard errors.
    """
    lhs = np.empty(draws)
    rhs = np.empty(draws)
    for i in range(draws):
        gen = rng.stream('efficiency', i)
        z = db.point(int(gen.integers(0, len(db))))
        k = int(gen.integers(1, m + 1))
        S = sample_subset(db, k - 1, gen)
        lhs[i] = U.evaluate(S.with_point(z)) - U.evaluate(S)
        rhs[i] = U.evaluate(sample_subset(db, m, gen)) / m
    lhs_mean, lhs_se = _mean_and_stderr(lhs)
    rhs_mean, rhs_se = _mean_and_stderr(rhs)
    rhs_mean -= U.empty_value / m
    return {'expected_value': lhs_mean, 'expected_value_stderr': lhs_se,
            'coalition_share': rhs_mean, 'coalition_share_stderr': rhs_se}


# ============================================================================
# AXIOM SUITE
# ============================================================================

@dataclass
class AxiomInstance:
    """A small valuation problem with the structure each axiom check needs"""
    name: str
    B: Dataset
    potential: Potential
    duplicate_pair: Optional[Tuple[int, int]] = None
    null_positions: List[int] = field(default_factory=list)
    partner: Optional[Potential] = None


@dataclass
class AxiomCheck:
    check: str
    instance: str
    potential: str
    error: float
    passed: bool


@dataclass
class AxiomReport:
    checks: List[AxiomCheck] = field(default_factory=list)
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[AxiomCheck]:
        return [c for c in self.checks if not c.passed]

    def add(self, check: str, instance: AxiomInstance, error: float, passed: bool = None):
        if passed is None:
            passed = error <= self.tolerance
        self.checks.append(AxiomCheck(check, instance.name, instance.potential.name, float(error), bool(passed)))

    def to_dict(self) -> Dict:
        return {
            'passed': self.passed,
            'tolerance': self.tolerance,
            'n_checks': len(self.checks),
            'n_failed': len(self.failures),
            'checks': [vars(c) for c in self.checks],
        }


def axiom_suite(instances: Sequence[AxiomInstance], config: ExactConfig = None,
                verbose: bool = False) -> AxiomReport:
    """
    Symmetry, null player, efficiency and additivity on each instance, plus the
    subset/permutation agreement where |B| is small enough to enumerate orderings.
    """
    config = config or ExactConfig()
    report = AxiomReport(tolerance=config.tolerance)
    for instance in instances:
        B, U = instance.B, instance.potential
        cache = SubsetCache(B, U)
        values = exact_data_shapley_all(B, U, config, cache=cache)

        coalition = cache((1 << len(B)) - 1) - cache(0)
        report.add('efficiency', instance, abs(math.fsum(values) - coalition))

        if instance.duplicate_pair is not None:
            a, b = instance.duplicate_pair
            report.add('symmetry', instance, abs(values[a] - values[b]))

        for position in instance.null_positions:
            report.add('null_player', instance, abs(values[position]))

        if instance.partner is not None:
            partner_values = exact_data_shapley_all(B, instance.partner, config)
            mixture = MixturePotential([U, instance.partner], [0.5, 0.5])
            mixed_values = exact_data_shapley_all(B, mixture, config)
            gap = np.max(np.abs(mixed_values - 0.5 * (values + partner_values)))
            report.add('additivity', instance, float(gap))

        if len(B) <= PERMUTATION_MAX_N:
            by_permutation = permutation_data_shapley(B, U, cache=cache)
            report.add('permutation_form', instance, float(np.max(np.abs(by_permutation - values))))

        if verbose:
            status = "✅" if all(c.passed for c in report.checks if c.instance == instance.name) else "❌"
            print(f"  {status} {instance.name} ({U.name}, {len(B)} points, "
                  f"{cache.evaluations} subsets)")
    return report


AXIOM_POTENTIALS = ('mean', 'knn', 'logistic', 'additive', 'indicator')


def build_axiom_instance(name: str, B: Dataset, kind: str, test_set: Dataset = None,
                         duplicate_pair: Tuple[int, int] = None,
                         weights: Sequence[float] = None) -> AxiomInstance:
    """
    Wrap B with a built-in potential and the null players that potential
    provably ignores; every instance is paired with an equal-weight additive
    potential for the additivity check.
    """
    n = len(B)
    ids = B.ids.tolist()
    null_positions: List[int] = []
    if kind == 'mean':
        U = MeanEstimationPotential.from_database(B)
    elif kind in ('knn', 'logistic'):
        if test_set is None or B.label_kind != LABEL_CATEGORICAL:
            raise ConfigError(f"{kind} axiom instance needs categorical data and a test set")
        learner = KnnLearner(3) if kind == 'knn' else LogisticLearner(epochs=50)
        U = AccuracyPotential(learner, test_set, n_classes=B.n_classes)
    elif kind == 'additive':
        weights = list(weights) if weights is not None else [1.0] * n
        null_positions = [i for i in range(n) if weights[i] == 0.0]
        U = AdditivePotential(max(math.fsum(weights), 1e-12), dict(zip(ids, weights)))
    elif kind == 'indicator':
        avoid = set(duplicate_pair or ())
        target = next(i for i in range(n) if i not in avoid) if len(avoid) < n else 0
        null_positions = [i for i in range(n) if i != target]
        U = IndicatorPotential(ids[target])
    else:
        raise ConfigError(f"unknown axiom potential {kind!r}")
    partner = AdditivePotential(float(n), {pid: 1.0 for pid in ids})
    return AxiomInstance(name=name, B=B, potential=U, duplicate_pair=duplicate_pair,
                         null_positions=null_positions, partner=partner)


def random_axiom_instances(count: int, seed: int, max_size: int = 8, dimension: int = 2) -> List[AxiomInstance]:
    """
    Random small instances cycling through the built-in potentials. Each B ends
    with a duplicate of its first point under a fresh id.
    """
    if max_size < 3:
        raise ConfigError(f"max_size must be >= 3, got {max_size}")
    rng = RandomSource(seed)
    instances = []
    for i in range(count):
        gen = rng.stream('axiom-instance', i)
        n = int(gen.integers(3, max_size + 1))
        X = gen.normal(size=(n - 1, dimension))
        y = gen.integers(0, 2, size=n - 1)
        X = np.vstack([X, X[:1]])
        y = np.concatenate([y, y[:1]])
        B = Dataset(X, y, ids=np.arange(n), label_kind=LABEL_CATEGORICAL, n_classes=2)
        test_set = Dataset(gen.normal(size=(5, dimension)), gen.integers(0, 2, size=5),
                           label_kind=LABEL_CATEGORICAL, n_classes=2)
        kind = AXIOM_POTENTIALS[i % len(AXIOM_POTENTIALS)]
        weights = None
        if kind == 'additive':
            weights = gen.uniform(0.5, 2.0, size=n).tolist()
            weights[-1] = weights[0]
            weights[1] = 0.0
        instances.append(build_axiom_instance(f"random-{i}", B, kind, test_set, duplicate_pair=(0, n - 1),
                                              weights=weights))
    return instances
