"""Smoothed Bellman recursion for 0/1 Knapsack and Top-k.

``V[i, c]`` is the smoothed value of the sub-problem restricted to the first
``i`` items with capacity ``c``; ``Q[i, c]`` is the probability of picking
item ``i`` in that state and ``DQ[i, c]`` its sensitivity to the pick value.
Row ``i`` only reads row ``i - 1``, so each row is swept in parallel over
capacities when more than one thread is requested.

Memory: three ``(n + 1) x (C + 1)`` float64 tables, i.e. ``24 (n+1)(C+1)``
bytes per instance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from diffknap._threads import numba_threads, resolve_threads
from diffknap.errors import ValidationError
from diffknap.regularizers import Regularizer, smax2

__all__ = ["Mode", "ProblemSpec", "ForwardTables", "forward", "batch_forward"]


class Mode(enum.Enum):
    KNAPSACK = "knapsack"
    TOPK = "topk"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Item values, integer weights, capacity and constraint type.

    In ``Mode.TOPK`` the weights are all ones and ``capacity`` is ``k``; the
    constraint is then an equality.
    """

    theta: np.ndarray
    weights: np.ndarray
    capacity: int
    mode: Mode = Mode.KNAPSACK

    def __post_init__(self):
        mode = self.mode
        if isinstance(mode, str):
            try:
                mode = Mode(mode.lower())
            except ValueError:
                raise ValidationError(f"unknown mode {self.mode!r}") from None
            object.__setattr__(self, "mode", mode)

        theta = np.array(self.theta, dtype=np.float64)
        if theta.ndim != 1 or theta.size < 1:
            raise ValidationError("theta must be a non-empty vector")
        if not np.all(np.isfinite(theta)):
            raise ValidationError("theta must be finite")

        raw_w = np.asarray(self.weights)
        if raw_w.shape != theta.shape:
            raise ValidationError(
                f"weights must have the same length as theta ({theta.size}), got shape {raw_w.shape}"
            )
        if raw_w.dtype.kind == "f":
            if not np.all(np.isfinite(raw_w)) or np.any(raw_w != np.round(raw_w)):
                raise ValidationError("weights must be integers")
        elif raw_w.dtype.kind not in "iub":
            raise ValidationError("weights must be integers")
        weights = raw_w.astype(np.int64)
        if np.any(weights < 1):
            raise ValidationError("weights must be >= 1 (zero-weight items are not supported)")

        capacity = self.capacity
        if isinstance(capacity, (float, np.floating)) and float(capacity).is_integer():
            capacity = int(capacity)
        if not isinstance(capacity, (int, np.integer)) or isinstance(capacity, bool):
            raise ValidationError(f"capacity must be an integer, got {self.capacity!r}")
        capacity = int(capacity)
        if capacity < 0:
            raise ValidationError("capacity must be >= 0")

        if mode is Mode.TOPK:
            if np.any(weights != 1):
                raise ValidationError("top-k mode requires unit weights")
            if capacity > theta.size:
                raise ValidationError(f"top-k requires k <= n, got k={capacity}, n={theta.size}")

        object.__setattr__(self, "theta", _readonly(theta))
        object.__setattr__(self, "weights", _readonly(weights))
        object.__setattr__(self, "capacity", capacity)

    @classmethod
    def knapsack(cls, theta, weights, capacity) -> "ProblemSpec":
        return cls(theta, weights, capacity, Mode.KNAPSACK)

    @classmethod
    def topk(cls, theta, k) -> "ProblemSpec":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta, np.ones(theta.shape, dtype=np.int64), k, Mode.TOPK)

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def is_topk(self) -> bool:
        return self.mode is Mode.TOPK

    def with_theta(self, theta) -> "ProblemSpec":
        return ProblemSpec(theta, self.weights, self.capacity, self.mode)

    def permuted(self, perm) -> "ProblemSpec":
        """Instance with items reordered so new item ``j`` is old item ``perm[j]``."""
        perm = np.asarray(perm)
        return ProblemSpec(self.theta[perm], self.weights[perm], self.capacity, self.mode)

    def is_feasible(self, y, atol: float = 0.0) -> bool:
        y = np.asarray(y, dtype=np.float64)
        if self.is_topk:
            return abs(y.sum() - self.capacity) <= atol
        return float(self.weights @ y) <= self.capacity + atol

    def same_structure(self, other: "ProblemSpec") -> bool:
        return (
            self.mode is other.mode
            and self.capacity == other.capacity
            and np.array_equal(self.weights, other.weights)
        )

    def __eq__(self, other):
        if not isinstance(other, ProblemSpec):
            return NotImplemented
        return self.same_structure(other) and np.array_equal(self.theta, other.theta)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ForwardTables:
    """Outputs of the forward sweep, shared by the operator, sampler and VJP."""

    V: np.ndarray
    Q: np.ndarray
    DQ: np.ndarray
    spec: ProblemSpec = field(repr=False)
    reg: Regularizer

    @property
    def value(self) -> float:
        return float(self.V[-1, -1])


def _forward_impl(theta, w, C, kind, gamma, V, Q, DQ):
    n = theta.shape[0]
    for i in range(1, n + 1):
        wi = w[i - 1]
        ti = theta[i - 1]
        for c in prange(1, C + 1):
            if wi > c:
                V[i, c] = V[i - 1, c]
            else:
                v, q, dq = smax2(kind, gamma, ti + V[i - 1, c - wi], V[i - 1, c])
                V[i, c] = v
                Q[i, c] = q
                DQ[i, c] = dq


_forward_serial = njit(cache=True)(_forward_impl)
_forward_parallel = njit(cache=True, parallel=True)(_forward_impl)


@njit(cache=True, parallel=True)
def _batch_forward_kernel(thetas, w, C, kind, gamma, V, Q, DQ):
    for b in prange(thetas.shape[0]):
        _forward_serial(thetas[b], w, C, kind, gamma, V[b], Q[b], DQ[b])


@njit(cache=True)
def _batch_forward_serial(thetas, w, C, kind, gamma, V, Q, DQ):
    for b in range(thetas.shape[0]):
        _forward_serial(thetas[b], w, C, kind, gamma, V[b], Q[b], DQ[b])


def _init_tables(shape_prefix, n, C, topk):
    V = np.zeros(shape_prefix + (n + 1, C + 1))
    if topk:
        V[..., 0, 1:] = -np.inf
    Q = np.zeros_like(V)
    DQ = np.zeros_like(V)
    return V, Q, DQ


def forward(spec: ProblemSpec, reg: Regularizer, threads: int | None = None) -> ForwardTables:
    """Fill the smoothed DP tables; ``tables.value`` is the smoothed optimum.

    With ``reg = Regularizer.none()`` this is the classical 0/1 Knapsack
    (or Top-k) DP and ``value`` is the exact optimum.
    """
    threads = resolve_threads(threads)
    n, C = spec.n, spec.capacity
    V, Q, DQ = _init_tables((), n, C, spec.is_topk)
    args = (spec.theta, spec.weights, C, reg.code, reg.gamma, V, Q, DQ)
    if threads == 1:
        _forward_serial(*args)
    else:
        with numba_threads(threads):
            _forward_parallel(*args)
    return ForwardTables(_readonly(V), _readonly(Q), _readonly(DQ), spec, reg)


def batch_forward(spec: ProblemSpec, thetas, reg: Regularizer, threads: int | None = None) -> list[ForwardTables]:
    """:func:`forward` for every row of ``thetas`` on the structure of ``spec``.

    Only ``spec.weights``, ``spec.capacity`` and ``spec.mode`` are used; the
    rows are independent and are distributed over threads.
    """
    try:
        thetas = np.array(thetas, dtype=np.float64)
    except ValueError:
        raise ValidationError("thetas must be a rectangular B x n matrix") from None
    if thetas.ndim != 2:
        raise ValidationError("thetas must be a B x n matrix")
    if thetas.shape[1] != spec.n:
        raise ValidationError(f"every theta row must have length {spec.n}, got {thetas.shape[1]}")
    specs = [spec.with_theta(row) for row in thetas]
    threads = resolve_threads(threads)
    n, C = spec.n, spec.capacity
    V, Q, DQ = _init_tables((thetas.shape[0],), n, C, spec.is_topk)
    args = (thetas, spec.weights, C, reg.code, reg.gamma, V, Q, DQ)
    if threads == 1:
        _batch_forward_serial(*args)
    else:
        with numba_threads(threads):
            _batch_forward_kernel(*args)
    return [
        ForwardTables(_readonly(V[b]), _readonly(Q[b]), _readonly(DQ[b]), s, reg)
        for b, s in enumerate(specs)
    ]


def check_tables(tables: ForwardTables, spec: ProblemSpec, reg: Regularizer) -> None:
    """Raise unless ``tables`` were produced by ``forward(spec, reg)``."""
    if tables.V.shape != (spec.n + 1, spec.capacity + 1):
        raise ValidationError(
            f"tables have shape {tables.V.shape}, expected {(spec.n + 1, spec.capacity + 1)}"
        )
    if tables.reg != reg:
        raise ValidationError(f"tables were computed with {tables.reg}, not {reg}")
    if tables.spec is not spec and tables.spec != spec:
        raise ValidationError("tables were computed for a different problem instance")
