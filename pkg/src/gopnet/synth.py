"""Synthetic classification problems used by tests and examples."""

from __future__ import annotations

import numpy as np

from .data import Dataset, split_dataset


def two_moons(n: int = 500, noise: float = 0.2, seed: int = 0):
    """Two interleaving half circles; the classic nonlinear 2-D benchmark."""
    rng = np.random.default_rng(seed)
    n_outer = n // 2
    n_inner = n - n_outer
    t_outer = np.linspace(0.0, np.pi, n_outer)
    t_inner = np.linspace(0.0, np.pi, n_inner)
    outer = np.column_stack([np.cos(t_outer), np.sin(t_outer)])
    inner = np.column_stack([1.0 - np.cos(t_inner), 0.5 - np.sin(t_inner)])
    X = np.vstack([outer, inner]) + rng.normal(0.0, noise, size=(n, 2))
    y = np.concatenate([np.zeros(n_outer, dtype=int), np.ones(n_inner, dtype=int)])
    return X, y


def xor_blobs(n: int = 400, std: float = 0.35, seed: int = 0):
    """Four Gaussian clusters at (+-1, +-1) labeled by the sign of x1 * x2."""
    rng = np.random.default_rng(seed)
    centers = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]], dtype=float)
    assignment = rng.integers(0, 4, size=n)
    X = centers[assignment] + rng.normal(0.0, std, size=(n, 2))
    y = (assignment >= 2).astype(int)
    return X, y


def gaussian_blobs(n: int = 300, separation: float = 4.0, dim: int = 2,
                   seed: int = 0):
    """Two well-separated spherical Gaussians; linearly separable."""
    rng = np.random.default_rng(seed)
    n0 = n // 2
    offset = np.zeros(dim)
    offset[0] = separation
    X = np.vstack([
        rng.normal(0.0, 1.0, size=(n0, dim)),
        rng.normal(0.0, 1.0, size=(n - n0, dim)) + offset,
    ])
    y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n - n0, dtype=int)])
    return X, y


def noise_labels(n: int = 300, dim: int = 5, n_classes: int = 2, seed: int = 0):
    """Standard-normal features with labels independent of them."""
    rng = np.random.default_rng(seed)
    X = rng.normal(0.0, 1.0, size=(n, dim))
    y = rng.integers(0, n_classes, size=n)
    return X, y


def noisy_tabular(n: int = 768, dim: int = 8, imbalance: float = 0.65,
                  flip: float = 0.12, seed: int = 0):
    """Imbalanced binary problem with a nonlinear rule and label noise.

    Mimics the statistics of small clinical tabular benchmarks: mixed feature
    scales, ~2:1 class ratio, and an accuracy ceiling well below 1.
    """
    rng = np.random.default_rng(seed)
    X = (rng.normal(size=(n, dim)) * rng.uniform(0.5, 2.0, size=dim)
         + rng.uniform(-1, 1, size=dim))
    score = (X[:, 0] + 0.9 * X[:, 1] * X[:, 2] - 0.7 * np.abs(X[:, 3])
             + 0.5 * np.sin(X[:, 4]) + 0.3 * X[:, 5])
    y = (score > np.quantile(score, imbalance)).astype(int)
    flips = rng.random(n) < flip
    y[flips] = 1 - y[flips]
    return X, y


def as_dataset(X, y, fractions=None, seed: int = 0,
               stratified: bool = True) -> Dataset:
    """Wrap arrays in a Dataset and optionally split it."""
    ds = Dataset(np.asarray(X, dtype=float), np.asarray(y, dtype=int),
                 int(np.max(y)) + 1)
    if fractions is not None:
        ds = split_dataset(ds, fractions, seed=seed, stratified=stratified)
    return ds
