"""Minimum-cost assignment between ground-truth objects and predicted queries."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError


def hungarian(cost) -> np.ndarray:
    """Optimal assignment for a [K, N] cost matrix with K <= N.

    Returns ``cols`` of length K: row k is assigned to column ``cols[k]``, all
    distinct, minimising the summed cost.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise InputError(f"cost matrix must be 2-D, got shape {cost.shape}")
    k, n = cost.shape
    if k > n:
        raise InputError(f"more rows ({k}) than columns ({n})")
    if not np.all(np.isfinite(cost)):
        raise InputError("cost matrix must be finite")
    if k == 0:
        return np.zeros(0, dtype=np.int64)

    rows, cols = linear_sum_assignment(cost)
    out = np.empty(k, dtype=np.int64)
    out[rows] = cols
    return out


def brute_force_assignment(cost) -> tuple[np.ndarray, float]:
    """Exhaustive search over injective assignments; for small matrices only."""
    cost = np.asarray(cost, dtype=np.float64)
    k, n = cost.shape
    best, best_cols = np.inf, None
    rows = np.arange(k)
    for perm in itertools.permutations(range(n), k):
        total = cost[rows, list(perm)].sum()
        if total < best:
            best, best_cols = total, np.array(perm)
    return best_cols, float(best)
