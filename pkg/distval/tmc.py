#!/usr/bin/env python3
"""
TMC-Shapley baseline
Truncated Monte Carlo permutation sampling for the data Shapley value of a
fixed dataset. Used by the buyer side of the pricing study and as a
comparison estimator.
"""

import math
import multiprocessing as mp
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import DEFAULT_WINDOW, ConfigError, DataError, Dataset, Potential, RandomSource, ValueTable
from .estimator import stopping_rule

DEFAULT_TRUNCATION_TOLERANCE = 0.01


@dataclass
class TmcConfig:
    max_permutations: int = 1000
    truncation_tolerance: float = DEFAULT_TRUNCATION_TOLERANCE
    window: int = DEFAULT_WINDOW
    threshold: float = 0.01
    seed: int = 0
    workers: int = 1
    verbose: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.max_permutations < 1:
            raise ConfigError(f"tmc.max_permutations must be >= 1, got {self.max_permutations}")
        if math.isnan(self.truncation_tolerance) or self.truncation_tolerance < 0:
            raise ConfigError(f"tmc.truncation_tolerance must be >= 0, got {self.truncation_tolerance}")
        if self.window < 1:
            raise ConfigError(f"tmc.window must be >= 1, got {self.window}")
        if not 0.0 <= self.threshold < 1.0:
            raise ConfigError(f"tmc.threshold must be in [0, 1), got {self.threshold}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    def describe(self) -> dict:
        return {'max_permutations': self.max_permutations, 'truncation_tolerance': self.truncation_tolerance,
                'window': self.window, 'threshold': self.threshold, 'seed': self.seed}


def permutation_contributions(B: Dataset, U: Potential, order: np.ndarray, full_value: float,
                              tolerance: float) -> Tuple[np.ndarray, int]:
    """
    Marginal contribution of each point to its predecessors along one ordering,
    in B's row order. Once the prefix potential is within `tolerance` of U(B)
    the remaining points get 0. Returns (contributions, training points used).
    """
    contributions = np.zeros(len(B))
    previous = U.evaluate(None)
    cost = 0
    for j, position in enumerate(order):
        if abs(full_value - previous) < tolerance:
            break
        current = U.evaluate(B.take(order[:j + 1]))
        cost += j + 1
        contributions[position] = current - previous
        previous = current
    return contributions, cost


def _permutation_task(args):
    B, U, full_value, tolerance, seed, t = args
    order = RandomSource(seed).stream('permutation', t).permutation(len(B))
    return permutation_contributions(B, U, order, full_value, tolerance)


def tmc_shapley(B: Dataset, U: Potential, config: TmcConfig) -> ValueTable:
    """Running means of per-permutation contributions, folded in permutation order"""
    if len(B) == 0:
        raise DataError("empty dataset")
    full_value = U.evaluate(B)
    table = ValueTable(B.ids, len(B), config.seed, 'tmc', config.window)
    table.config = {'tmc': config.describe(), 'potential': U.describe()}
    table.cost = len(B)

    if config.verbose:
        print(f"🚀 TMC-Shapley on {len(B)} points (tolerance={config.truncation_tolerance}, "
              f"max_permutations={config.max_permutations})")

    def tasks(start, stop):
        return [(B, U, full_value, config.truncation_tolerance, config.seed, t) for t in range(start, stop)]

    pool = mp.Pool(config.workers) if config.workers > 1 else None
    batch = config.workers * 4 if pool is not None else 1
    try:
        t = 1
        while t <= config.max_permutations and not table.converged:
            stop = min(t + batch, config.max_permutations + 1)
            results = pool.map(_permutation_task, tasks(t, stop)) if pool else map(_permutation_task, tasks(t, stop))
            for contributions, cost in results:
                table.update(contributions)
                table.cost += cost
                if stopping_rule(table, config.window, config.threshold):
                    table.converged = True
                    break
            t = stop
    finally:
        if pool is not None:
            pool.close()
            pool.join()

    if config.verbose:
        status = "converged" if table.converged else "hit max_permutations"
        print(f"✅ {status} after {table.count} permutations")
    return table
