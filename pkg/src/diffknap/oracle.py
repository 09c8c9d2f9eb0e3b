"""Brute-force ground truth for small instances.

Nothing here touches the DP tables: feasible sets are enumerated directly,
so these functions serve as independent checks of the DP-based routines.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.special import logsumexp

from diffknap.dp import ProblemSpec
from diffknap.errors import EnumerationLimitError, ValidationError

__all__ = [
    "MAX_ENUM_ITEMS",
    "FeasibleSet",
    "enumerate_feasible",
    "count_feasible",
    "brute_max",
    "gibbs_stats",
    "fd_gradient",
]

MAX_ENUM_ITEMS = 24


@dataclass(frozen=True, eq=False)
class FeasibleSet:
    """Feasible selections as rows of a ``(|Y|, n)`` int8 matrix, lexicographic order."""

    masks: np.ndarray

    def __len__(self):
        return self.masks.shape[0]

    def __iter__(self):
        return iter(self.masks)


def enumerate_feasible(spec: ProblemSpec) -> FeasibleSet:
    """All 0/1 vectors satisfying the capacity (or cardinality) constraint.

    Rows are ordered lexicographically with item 1 as the most significant bit.
    """
    n = spec.n
    if n > MAX_ENUM_ITEMS:
        raise EnumerationLimitError(f"refusing to enumerate 2^{n} selections (limit n <= {MAX_ENUM_ITEMS})")
    codes = np.arange(1 << n, dtype=np.int64)
    load = np.zeros(codes.shape, dtype=np.int64)
    for i in range(n):
        load += int(spec.weights[i]) * ((codes >> (n - 1 - i)) & 1)
    if spec.is_topk:
        keep = codes[load == spec.capacity]
    else:
        keep = codes[load <= spec.capacity]
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    masks = ((keep[:, None] >> shifts[None, :]) & 1).astype(np.int8)
    return FeasibleSet(masks)


def count_feasible(spec: ProblemSpec) -> int:
    """Size of the feasible set via a counting DP (no enumeration)."""
    if spec.is_topk:
        return comb(spec.n, spec.capacity)
    C = spec.capacity
    # ways[c] = number of subsets of the items seen so far with total weight exactly c
    ways = [0] * (C + 1)
    ways[0] = 1
    for wi in spec.weights:
        wi = int(wi)
        for c in range(C, wi - 1, -1):
            ways[c] += ways[c - wi]
    return sum(ways)


def brute_max(spec: ProblemSpec) -> tuple[float, np.ndarray]:
    """Optimal value and the matrix of all optimal selections."""
    Y = enumerate_feasible(spec).masks
    scores = Y @ spec.theta
    best = scores.max()
    return float(best), Y[scores == best]


def gibbs_stats(theta, spec: ProblemSpec, gamma: float):
    """``logZ = log sum_y exp(<theta, y>/gamma)`` and the Gibbs mean of ``y``."""
    if gamma <= 0:
        raise ValidationError("gamma must be positive")
    Y = enumerate_feasible(spec).masks.astype(np.float64)
    scores = Y @ np.asarray(theta, dtype=np.float64) / gamma
    logZ = float(logsumexp(scores))
    p = np.exp(scores - logZ)
    return logZ, p @ Y


def fd_gradient(f, theta, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    if h <= 0:
        raise ValidationError("step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        grad[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return grad
