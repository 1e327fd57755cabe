#!/usr/bin/env python3
"""
Seeded synthetic fixtures
Gaussian blobs for classification, linear-Gaussian data for regression and
standard normal draws for mean estimation, so every experiment and test runs
without downloads.
"""

import math
from typing import List, Mapping, Sequence, Tuple

import numpy as np

from .core import LABEL_CATEGORICAL, LABEL_NONE, LABEL_REAL, ConfigError, DataError, Dataset, RandomSource

SYNTH_KINDS = ('blobs', 'linear', 'normal')


def _centers(n_classes: int, dim: int, margin: float) -> np.ndarray:
    centers = np.zeros((n_classes, dim))
    if dim == 1:
        centers[:, 0] = margin * (np.arange(n_classes) - (n_classes - 1) / 2.0)
        return centers
    angles = 2.0 * math.pi * np.arange(n_classes) / n_classes
    centers[:, 0] = margin / 2.0 * np.cos(angles)
    centers[:, 1] = margin / 2.0 * np.sin(angles)
    return centers


def make_blobs(n: int, dim: int = 2, margin: float = 3.0, flip_rate: float = 0.0, n_classes: int = 2,
               seed: int = 0, clean_tail: int = 0) -> Tuple[Dataset, np.ndarray]:
    """
    Balanced isotropic Gaussian classes with unit variance, centers `margin` apart
    (two classes) or on a circle of diameter `margin`. A `flip_rate` share of
    labels is replaced by a different class; the last `clean_tail` rows are never
    flipped (held-out rows drawn together with the training rows).
    Returns: (dataset, boolean mask of flipped points)
    """
    if n < 1 or dim < 1 or n_classes < 2:
        raise ConfigError("make_blobs needs n >= 1, dim >= 1 and n_classes >= 2")
    if not 0.0 <= flip_rate <= 1.0:
        raise ConfigError(f"flip_rate must be in [0, 1], got {flip_rate}")
    gen = RandomSource(seed).stream('blobs')
    y = gen.permutation(np.arange(n) % n_classes)
    X = _centers(n_classes, dim, margin)[y] + gen.normal(size=(n, dim))
    flipped = gen.random(n) < flip_rate
    flipped[n - min(clean_tail, n):] = False
    shifts = gen.integers(1, n_classes, size=n)
    y = np.where(flipped, (y + shifts) % n_classes, y)
    return Dataset(X, y, label_kind=LABEL_CATEGORICAL, n_classes=n_classes), flipped


def make_linear(n: int, dim: int = 2, noise: float = 0.1, seed: int = 0) -> Dataset:
    """y = X·w + noise·ε with w, X, ε standard normal"""
    if n < 1 or dim < 1 or noise < 0:
        raise ConfigError("make_linear needs n >= 1, dim >= 1 and noise >= 0")
    gen = RandomSource(seed).stream('linear')
    w = gen.normal(size=dim)
    X = gen.normal(size=(n, dim))
    y = X @ w + noise * gen.normal(size=n)
    return Dataset(X, y, label_kind=LABEL_REAL)


def make_normal(n: int, dim: int = 1, seed: int = 0) -> Dataset:
    if n < 1 or dim < 1:
        raise ConfigError("make_normal needs n >= 1 and dim >= 1")
    gen = RandomSource(seed).stream('normal')
    return Dataset(gen.normal(size=(n, dim)), label_kind=LABEL_NONE)


def split(data: Dataset, sizes: Sequence[int], seed: int = 0) -> List[Dataset]:
    """Disjoint random parts with fresh contiguous ids, numbered across parts"""
    if any(s < 0 for s in sizes) or sum(sizes) > len(data):
        raise DataError(f"cannot split {len(data)} points into parts of sizes {list(sizes)}")
    order = RandomSource(seed).stream('split').permutation(len(data))
    parts = []
    start = 0
    for size in sizes:
        part = data.take(order[start:start + size])
        parts.append(Dataset(part.X, part.y, np.arange(start, start + size), label_kind=data.label_kind,
                             n_classes=data.n_classes))
        start += size
    return parts


def from_recipe(recipe: Mapping, seed: int, n: int = None, clean_tail: int = 0) -> Tuple[Dataset, np.ndarray]:
    """
    Build a fixture from a config mapping {kind, n, dim, margin?, flip_rate?,
    n_classes?, noise?}. Returns (dataset, flipped mask; all False except blobs).
    """
    kind = recipe.get('kind')
    n = int(recipe.get('n', 0)) if n is None else n
    dim = int(recipe.get('dim', 2 if kind != 'normal' else 1))
    if kind == 'blobs':
        return make_blobs(n, dim, float(recipe.get('margin', 3.0)), float(recipe.get('flip_rate', 0.0)),
                          int(recipe.get('n_classes', 2)), seed, clean_tail)
    if kind == 'linear':
        data = make_linear(n, dim, float(recipe.get('noise', 0.1)), seed)
    elif kind == 'normal':
        data = make_normal(n, dim, seed)
    else:
        raise ConfigError(f"data.synthetic.kind must be one of {SYNTH_KINDS}, got {kind!r}")
    return data, np.zeros(len(data), dtype=bool)
