#!/usr/bin/env python3
"""
Evaluation experiments
Point removal curves, the computation-vs-recovery trade-off of the fast
estimator, and the data pricing study (seller values vs buyer Shapley
values, with point addition curves). Results write to plot-ready CSV plus a
JSON summary.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate, stats

from .core import (LABEL_CATEGORICAL, ConfigError, DataError, Dataset, Potential, RandomSource, ValueTable,
                   json_default)
from .estimator import EstimatorConfig, WeightSchedule, fast_d_shapley
from .interpolate import ValueInterpolator
from .tmc import TmcConfig, tmc_shapley

ORDER_DESC = 'by_value_desc'
ORDER_ASC = 'by_value_asc'
ORDER_RANDOM = 'random'
ORDERINGS = (ORDER_DESC, ORDER_ASC, ORDER_RANDOM)


# ============================================================================
# RESULT TYPES
# ============================================================================

@dataclass
class RemovalCurve:
    """Metric after removing (or adding) successive batches of points"""
    fractions: np.ndarray
    accuracy: np.ndarray
    ordering: str
    seed: Optional[int] = None

    @property
    def area(self) -> float:
        return float(integrate.trapezoid(self.accuracy, self.fractions))

    @property
    def relative(self) -> np.ndarray:
        """Accuracy relative to the untouched set (step 0)"""
        return self.accuracy - self.accuracy[0]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'ordering': self.ordering,
            'step': np.arange(len(self.fractions)),
            'fraction': self.fractions,
            'accuracy': self.accuracy,
            'relative_accuracy': self.relative,
        })


@dataclass
class PricingReport:
    rank_correlation: float
    ape: float
    addition_curves: Dict[str, RemovalCurve]
    ape_error: Optional[str] = None
    per_seed: List[Dict] = field(default_factory=list)

    def summary(self) -> Dict:
        return {
            'rank_correlation': self.rank_correlation,
            'ape': None if math.isnan(self.ape) else self.ape,
            'ape_error': self.ape_error,
            'final_accuracy': {name: float(c.accuracy[-1]) for name, c in self.addition_curves.items()},
            'per_seed': self.per_seed,
        }


# ============================================================================
# STATISTICS
# ============================================================================

def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman ρ with average ranks for ties"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"spearman needs equal lengths, got {a.shape[0]} and {b.shape[0]}")
    if a.shape[0] < 2:
        raise DataError("spearman needs at least 2 points")
    ra = stats.rankdata(a)
    rb = stats.rankdata(b)
    if np.all(ra == ra[0]) or np.all(rb == rb[0]):
        return float('nan')
    return float(np.corrcoef(ra, rb)[0, 1])


def r2_between(baseline: Sequence[float], other: Sequence[float]) -> float:
    """Recovery R²: squared Pearson correlation against the baseline values"""
    baseline = np.asarray(baseline, dtype=float)
    other = np.asarray(other, dtype=float)
    if baseline.shape != other.shape:
        raise DataError("r2_between needs equal lengths")
    if np.array_equal(baseline, other):
        return 1.0
    if np.ptp(baseline) == 0 or np.ptp(other) == 0:
        return 0.0
    return float(np.corrcoef(baseline, other)[0, 1] ** 2)


def stability_regression(data: Dataset, values: ValueTable, n_pairs: int, seed: int) -> Dict[str, float]:
    """
    Regress |val(z) − val(z′)| on ‖z − z′‖ over disjoint random pairs (each point
    used at most once); similar points should receive similar values (intercept near 0, positive slope).
    """
    n = min(int(n_pairs), len(data) // 2)
    if n < 3:
        raise DataError(f"stability regression needs at least 3 disjoint pairs, got {n}")
    order = RandomSource(seed).stream('stability-pairs').permutation(len(data))
    i, j = order[:n], order[n:2 * n]
    v = values.values_for(data.ids.tolist())
    gaps = np.abs(v[i] - v[j])
    dist = np.linalg.norm(data.X[i] - data.X[j], axis=1)
    fit = stats.linregress(dist, gaps)
    return {'slope': float(fit.slope), 'intercept': float(fit.intercept),
            'intercept_stderr': float(fit.intercept_stderr), 'rvalue': float(fit.rvalue), 'pairs': n}


def noise_enrichment(values: ValueTable, data: Dataset, noisy: np.ndarray) -> float:
    """Share of noisy points in the bottom value quartile over their base rate"""
    base_rate = float(np.mean(noisy))
    if base_rate == 0:
        return float('nan')
    v = values.values_for(data.ids.tolist())
    order = np.lexsort((data.ids, v))
    bottom = order[:max(1, len(order) // 4)]
    return float(np.mean(noisy[bottom])) / base_rate


# ============================================================================
# POINT REMOVAL
# ============================================================================

def removal_order(ids: np.ndarray, values: np.ndarray, ordering: str, seed: int = 0) -> np.ndarray:
    """Positions in removal order; value ties go to the smaller id first"""
    if ordering == ORDER_DESC:
        return np.lexsort((ids, -values))
    if ordering == ORDER_ASC:
        return np.lexsort((ids, values))
    if ordering == ORDER_RANDOM:
        return RandomSource(seed).stream('removal-order').permutation(ids.shape[0])
    raise ConfigError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")


def _batch_ends(n: int, steps: int) -> List[int]:
    if steps < 2:
        raise ConfigError(f"steps must be >= 2, got {steps}")
    batch = max(1, n // steps)
    ends = []
    for s in range(1, steps + 1):
        end = min(s * batch, n)
        if ends and end == ends[-1]:
            break
        ends.append(end)
    if ends[-1] < n:
        ends.append(n)
    return ends


def point_removal_experiment(train: Dataset, values: ValueTable, U: Potential, steps: int,
                             ordering: str = ORDER_DESC, seed: int = 0, verbose: bool = False) -> RemovalCurve:
    """
    Remove batches of max(1, ⌊N/steps⌋) points in the given order and record U
    on what remains; the first entry is U(train).
    """
    if len(train) == 0:
        raise DataError("empty dataset")
    v = values.values_for(train.ids.tolist())
    order = removal_order(train.ids, v, ordering, seed)
    fractions = [0.0]
    scores = [U.evaluate(train)]
    for end in _batch_ends(len(train), steps):
        fractions.append(end / len(train))
        scores.append(U.evaluate(train.take(order[end:])))
    curve = RemovalCurve(np.array(fractions), np.array(scores), ordering,
                         seed if ordering == ORDER_RANDOM else None)
    if verbose:
        print(f"  📊 {ordering}: start {scores[0]:.4f}, end {scores[-1]:.4f}, area {curve.area:.4f}")
    return curve


def addition_curve(initial: Dataset, additions: Dataset, order: np.ndarray, U: Potential, steps: int,
                   ordering: str, seed: int = None) -> RemovalCurve:
    """Add batches of `additions` (positions in `order`) to `initial`, recording U after each"""
    fractions = [0.0]
    scores = [U.evaluate(initial)]
    for end in _batch_ends(len(additions), steps):
        fractions.append(end / len(additions))
        scores.append(U.evaluate(initial.concat(additions.take(order[:end]))))
    return RemovalCurve(np.array(fractions), np.array(scores), ordering, seed)


# ============================================================================
# COMPUTATION VS RECOVERY
# ============================================================================

def speedup_recovery_experiment(Z: Dataset, db: Dataset, U: Potential, config: EstimatorConfig,
                                speed_settings: Sequence[Tuple[WeightSchedule, float]],
                                interpolator: ValueInterpolator = None,
                                verbose: bool = False) -> List[Tuple[float, float]]:
    """
    Run the fast estimator under each (schedule, p) setting and compare it to the
    uniform p = 1 baseline. Returns (relative training cost, R² vs baseline) per
    setting.
    """
    baseline_config = config.with_schedule(WeightSchedule.uniform(config.m))
    baseline = fast_d_shapley(Z, db, U, baseline_config, subsample_p=1.0)
    if verbose:
        print(f"📊 Baseline: {baseline.count} iterations, cost {baseline.cost:,}")
    baseline_values = baseline.values_for(Z.ids.tolist())
    interpolator = interpolator or ValueInterpolator()

    results = []
    for schedule, p in speed_settings:
        table = fast_d_shapley(Z, db, U, config.with_schedule(schedule), subsample_p=p,
                               interpolator=interpolator if p < 1.0 else None)
        relative_cost = table.cost / baseline.cost
        r2 = r2_between(baseline_values, table.values_for(Z.ids.tolist()))
        results.append((float(relative_cost), float(r2)))
        if verbose:
            print(f"  📊 {schedule.name}, p={p:g}: relative cost {relative_cost:.3f}, R² {r2:.3f}")
    return results


# ============================================================================
# PRICING STUDY
# ============================================================================

def apply_shift(data: Dataset, feature_noise: float = 0.0, class_weights: Sequence[float] = None,
                seed: int = 0) -> Dataset:
    """
    Perturb a dataset away from its source distribution: Gaussian feature noise
    and class rebalancing (each point kept with probability ∝ its class weight).
    """
    if feature_noise < 0:
        raise ConfigError(f"pricing.shift.feature_noise must be >= 0, got {feature_noise}")
    rng = RandomSource(seed)
    X = data.X + feature_noise * rng.stream('shift-noise').normal(size=data.X.shape) if feature_noise else data.X
    shifted = Dataset(X, data.y, data.ids, label_kind=data.label_kind, n_classes=data.n_classes)
    if class_weights is None:
        return shifted
    if data.label_kind != LABEL_CATEGORICAL:
        raise ConfigError("class rebalancing needs categorical labels")
    weights = np.asarray(class_weights, dtype=float)
    if weights.shape[0] < data.n_classes or np.any(weights < 0) or weights.max() <= 0:
        raise ConfigError("pricing.shift.class_weights needs one non-negative weight per class")
    keep_prob = weights[data.y.astype(np.int64)] / weights.max()
    keep = rng.stream('shift-rebalance').random(len(data)) < keep_prob
    return shifted.take(np.flatnonzero(keep))


def pricing_metrics(val: ValueTable, sh: ValueTable, sold_ids: Sequence[int]) -> Tuple[float, float, Optional[str]]:
    """
    Spearman ρ between seller values and buyer Shapley values over the sold set,
    and APE = |Σ val − Σ sh| / Σ val. Returns (ρ, APE, error message or None).
    """
    sold_ids = sorted(int(i) for i in sold_ids)
    v = val.values_for(sold_ids)
    s = sh.values_for(sold_ids)
    rho = spearman(v, s)
    total_val = math.fsum(v)
    if total_val <= 0:
        return rho, float('nan'), f"APE undefined: total seller value {total_val:.6g} is not positive"
    return rho, abs(total_val - math.fsum(s)) / total_val, None


def _markets(buyer_B, sold_S, seeds: Sequence[int], m: int) -> List[Tuple[Dataset, Dataset]]:
    """One (B, S) pair per seed; a single pair is shared by every seed"""
    buyers = [buyer_B] * len(seeds) if isinstance(buyer_B, Dataset) else list(buyer_B)
    solds = [sold_S] * len(seeds) if isinstance(sold_S, Dataset) else list(sold_S)
    if len(buyers) != len(seeds) or len(solds) != len(seeds):
        raise ConfigError(f"pricing needs one buyer and one sold set per seed ({len(seeds)} seeds), "
                          f"got {len(buyers)} and {len(solds)}")
    for B, S in zip(buyers, solds):
        if len(B) != m or len(S) != m:
            raise ConfigError(f"pricing needs |B| = |S| = m = {m}, got |B| = {len(B)}, |S| = {len(S)}")
        if np.intersect1d(B.ids, S.ids).size:
            raise DataError("buyer and sold data sets must have disjoint ids")
    return list(zip(buyers, solds))


def pricing_case_study(seller_db: Dataset, buyer_B, sold_S, U_builder: Callable[[Dataset], Potential], m: int,
                       seeds: Sequence[int], estimator: EstimatorConfig = None, tmc: TmcConfig = None,
                       subsample_p: float = 1.0, steps: int = 10, verbose: bool = False) -> PricingReport:
    """
    Seller values the sold set against its database with the fast estimator;
    the buyer computes TMC data Shapley values on B ∪ S. Curves add S to B by
    seller value, by buyer value and at random, averaged over seeds.

    Both parties score with the same task potential U_builder(seller_db). The
    seller prices at horizon |B ∪ S| = 2m, the size of the game the buyer
    values, so Σ_S val and Σ_S sh estimate the same share of U. buyer_B and
    sold_S are single data sets or one per seed (a fresh buyer per seed).
    estimator supplies T_max, the schedule family and the stopping rule; its
    horizon is replaced by 2m.
    """
    if not seeds:
        raise ConfigError("pricing.seeds must not be empty")
    markets = _markets(buyer_B, sold_S, seeds, m)
    horizon = 2 * m
    estimator = estimator or EstimatorConfig(m=horizon, T_max=2000, seed=0)
    schedule = estimator.schedule.with_horizon(horizon)
    tmc = tmc or TmcConfig()
    U = U_builder(seller_db)

    per_seed = []
    curves: Dict[str, List[RemovalCurve]] = {'by_val': [], 'by_sh': [], 'random': []}
    for seed, (buyer, sold) in zip(seeds, markets):
        if verbose:
            print(f"📊 Pricing seed {seed}")
        combined = buyer.concat(sold)
        sold_ids = sorted(sold.ids.tolist())
        sold_sorted = sold.take(sold.index_of(sold_ids))
        est = EstimatorConfig(m=horizon, T_max=estimator.T_max, schedule=schedule, window=estimator.window,
                              threshold=estimator.threshold, seed=seed, record_cardinalities=False,
                              workers=estimator.workers)
        val = fast_d_shapley(sold_sorted, seller_db, U, est, subsample_p=subsample_p,
                             interpolator=ValueInterpolator() if subsample_p < 1.0 else None)
        sh = tmc_shapley(combined, U, TmcConfig(tmc.max_permutations, tmc.truncation_tolerance,
                                                tmc.window, tmc.threshold, seed, tmc.workers))
        rho, ape, error = pricing_metrics(val, sh, sold_ids)
        per_seed.append({'seed': int(seed), 'rank_correlation': rho, 'ape': None if error else ape,
                         'seller_iterations': val.count, 'buyer_permutations': sh.count})

        ids = sold_sorted.ids
        orders = {
            'by_val': removal_order(ids, val.values_for(ids.tolist()), ORDER_DESC),
            'by_sh': removal_order(ids, sh.values_for(ids.tolist()), ORDER_DESC),
            'random': removal_order(ids, np.zeros(len(ids)), ORDER_RANDOM, seed),
        }
        for name, order in orders.items():
            curves[name].append(addition_curve(buyer, sold_sorted, order, U, steps, name,
                                               seed if name == 'random' else None))
        if verbose:
            ape_text = f"{ape:.4f}" if error is None else "undefined"
            print(f"  ✅ ρ = {rho:.4f}, APE = {ape_text}")

    averaged = {name: RemovalCurve(runs[0].fractions, np.mean([c.accuracy for c in runs], axis=0), name)
                for name, runs in curves.items()}
    apes = [row['ape'] for row in per_seed]
    ape_error = None
    if any(a is None for a in apes):
        ape_error = "APE undefined for at least one seed: total seller value is not positive"
        ape = float('nan')
    else:
        ape = float(np.mean(apes))
    return PricingReport(rank_correlation=float(np.mean([row['rank_correlation'] for row in per_seed])),
                         ape=ape, addition_curves=averaged, ape_error=ape_error, per_seed=per_seed)


# ============================================================================
# REPORT WRITERS
# ============================================================================

def write_json(payload: Dict, path: str):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=json_default)
        f.write('\n')


def write_curve_csv(curves: Sequence[RemovalCurve], path: str):
    frame = pd.concat([c.to_frame() for c in curves], ignore_index=True)
    frame.to_csv(path, index=False, lineterminator='\n', encoding='utf-8')


def write_speedup_csv(settings: Sequence[Tuple[WeightSchedule, float]], results: Sequence[Tuple[float, float]],
                      path: str):
    frame = pd.DataFrame({
        'schedule': [s.name for s, _ in settings],
        'subsample_p': [p for _, p in settings],
        'relative_cost': [c for c, _ in results],
        'r2': [r for _, r in results],
    })
    frame.to_csv(path, index=False, lineterminator='\n', encoding='utf-8')


def write_pricing_report(report: PricingReport, csv_path: str, json_path: str, extra: Dict = None):
    write_curve_csv(list(report.addition_curves.values()), csv_path)
    payload = report.summary()
    if extra:
        payload.update(extra)
    write_json(payload, json_path)
