"""Relaxed Knapsack / Top-k operator and hard backtracking.

The relaxed selection is the gradient of the smoothed value.  It is obtained
from the capacity marginals ``E[i, c]`` (the probability that the ancestral
sampler reaches item ``i`` with remaining capacity ``c``) via
``y_i = sum_c E[i, c] Q[i, c]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from diffknap._threads import numba_threads, resolve_threads
from diffknap.dp import ForwardTables, ProblemSpec, check_tables, forward
from diffknap.errors import ContractError
from diffknap.regularizers import Regularizer

__all__ = ["OperatorOutput", "relaxed_operator", "hard_argmax", "backtrack", "operator"]


@dataclass(frozen=True, eq=False)
class OperatorOutput:
    y: np.ndarray
    E: np.ndarray


def _marginals_impl(w, Q, E):
    n = Q.shape[0] - 1
    C = Q.shape[1] - 1
    E[n, C] = 1.0
    for i in range(n - 1, 0, -1):
        wn = w[i]  # weight of item i + 1
        for c in prange(0, C + 1):
            acc = E[i + 1, c] * (1.0 - Q[i + 1, c])
            if c + wn <= C:
                acc += E[i + 1, c + wn] * Q[i + 1, c + wn]
            E[i, c] = acc


_marginals_serial = njit(cache=True)(_marginals_impl)
_marginals_parallel = njit(cache=True, parallel=True)(_marginals_impl)


def capacity_marginals(tables: ForwardTables, threads: int | None = None) -> np.ndarray:
    """``E`` table for the given forward tables (row 0 is left at zero)."""
    threads = resolve_threads(threads)
    E = np.zeros_like(tables.Q)
    if threads == 1:
        _marginals_serial(tables.spec.weights, tables.Q, E)
    else:
        with numba_threads(threads):
            _marginals_parallel(tables.spec.weights, tables.Q, E)
    E.setflags(write=False)
    return E


def relaxed_operator(
    tables: ForwardTables, spec: ProblemSpec, reg: Regularizer, threads: int | None = None
) -> OperatorOutput:
    """Relaxed selection ``y = grad max_Omega(theta)`` from the forward tables."""
    if reg.is_hard:
        raise ContractError("relaxed_operator needs a smoothing regularizer; use hard_argmax for the hard case")
    check_tables(tables, spec, reg)
    E = capacity_marginals(tables, threads)
    y = (E[1:, 1:] * tables.Q[1:, 1:]).sum(axis=1)
    np.clip(y, 0.0, 1.0, out=y)  # summation rounding can overshoot by an ulp
    return OperatorOutput(y, E)


@njit(cache=True)
def _backtrack(w, Q, y):
    c = Q.shape[1] - 1
    for i in range(Q.shape[0] - 1, 0, -1):
        if Q[i, c] == 1.0:
            y[i - 1] = 1.0
            c -= w[i - 1]


def backtrack(tables: ForwardTables) -> np.ndarray:
    """Follow the pick/skip decisions of a hard DP table from ``(n, C)``."""
    if not tables.reg.is_hard:
        raise ContractError("backtracking requires tables computed with the hard max")
    y = np.zeros(tables.spec.n)
    _backtrack(tables.spec.weights, tables.Q, y)
    return y


def hard_argmax(spec: ProblemSpec) -> np.ndarray:
    """One maximizing 0/1 selection; ties prefer skipping the later item."""
    return backtrack(forward(spec, Regularizer.none()))


def operator(spec: ProblemSpec, reg: Regularizer, threads: int | None = None) -> np.ndarray:
    """Convenience: the relaxed selection (or hard mask for ``Kind.NONE``)."""
    if reg.is_hard:
        return hard_argmax(spec)
    return relaxed_operator(forward(spec, reg, threads), spec, reg, threads).y
