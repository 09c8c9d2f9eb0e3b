"""Ancestral sampling from the distribution induced by the forward tables.

Items are decided from ``n`` down to ``1``: item ``i`` is picked with
probability ``Q[i, c]`` where ``c`` is the capacity left by the later items.
Since ``Q[i, c] = 0`` whenever ``w[i] > c``, every draw is feasible.

Random numbers come from numpy's Philox (a 64-bit counter-based generator)
keyed by a :class:`numpy.random.SeedSequence`; independent streams are
obtained with :meth:`RngState.spawn` so batched sampling never shares state.
Each draw consumes exactly ``n`` uniforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from diffknap.dp import ForwardTables, ProblemSpec, check_tables
from diffknap.errors import ContractError, ValidationError
from diffknap.regularizers import KIND_SHANNON

__all__ = ["RngState", "SampleDraw", "sample", "sample_many", "log_prob"]


@dataclass
class RngState:
    """Seeded Philox stream; ``stream`` selects an independent sub-stream."""

    seed: int
    stream: tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ValidationError(f"seed must be an integer, got {self.seed!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must fit in an unsigned 64-bit integer")
        self.seed = int(self.seed)
        self.stream = tuple(int(s) for s in self.stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def spawn(self, index: int) -> "RngState":
        """Independent child stream, e.g. one per batch element."""
        return RngState(self.seed, self.stream + (int(index),))

    def uniforms(self, shape) -> np.ndarray:
        return self.generator.random(shape)


@dataclass(frozen=True)
class SampleDraw:
    y: np.ndarray
    log_prob: float


@njit(cache=True)
def _branch_logp(kind, gamma, theta, w, V, Q, i, c, pick):
    # log-probability of the decision taken for item i at remaining capacity c
    wi = w[i - 1]
    if wi > c:
        return -np.inf if pick else 0.0
    if kind == KIND_SHANNON:
        if pick:
            a = theta[i - 1] + V[i - 1, c - wi]
            if a == -np.inf:
                return -np.inf
            return (a - V[i, c]) / gamma
        b = V[i - 1, c]
        if b == -np.inf:
            return -np.inf
        return (b - V[i, c]) / gamma
    q = Q[i, c]
    if pick:
        return np.log(q) if q > 0.0 else -np.inf
    return np.log1p(-q) if q < 1.0 else -np.inf


@njit(cache=True)
def _sample_kernel(kind, gamma, theta, w, V, Q, u, Y, logp):
    n = Q.shape[0] - 1
    C = Q.shape[1] - 1
    for j in range(u.shape[0]):
        c = C
        acc = 0.0
        for i in range(n, 0, -1):
            pick = u[j, i - 1] < Q[i, c]
            acc += _branch_logp(kind, gamma, theta, w, V, Q, i, c, pick)
            if pick:
                Y[j, i - 1] = 1
                c -= w[i - 1]
        logp[j] = acc


@njit(cache=True)
def _log_prob_kernel(kind, gamma, theta, w, V, Q, y):
    n = Q.shape[0] - 1
    c = Q.shape[1] - 1
    acc = 0.0
    for i in range(n, 0, -1):
        pick = y[i - 1] == 1
        lp = _branch_logp(kind, gamma, theta, w, V, Q, i, c, pick)
        if lp == -np.inf:
            return -np.inf
        acc += lp
        if pick:
            c -= w[i - 1]
    return acc


def _require_smooth(tables: ForwardTables, spec: ProblemSpec):
    if tables.reg.is_hard:
        raise ContractError("sampling needs a smoothing regularizer; the hard DP is deterministic (use hard_argmax)")
    check_tables(tables, spec, tables.reg)


def sample_many(tables: ForwardTables, spec: ProblemSpec, rng: RngState, num: int):
    """Draw ``num`` selections; returns ``(Y, log_probs)`` with ``Y`` of shape ``(num, n)``."""
    _require_smooth(tables, spec)
    num = int(num)
    if num < 0:
        raise ValidationError("number of draws must be non-negative")
    if not isinstance(rng, RngState):
        raise ValidationError("rng must be an RngState")
    u = rng.uniforms((num, spec.n))
    Y = np.zeros((num, spec.n), dtype=np.int8)
    logp = np.empty(num)
    reg = tables.reg
    _sample_kernel(reg.code, reg.gamma, spec.theta, spec.weights, tables.V, tables.Q, u, Y, logp)
    return Y, logp


def sample(tables: ForwardTables, spec: ProblemSpec, rng: RngState) -> SampleDraw:
    """A single ancestral draw with its exact log-probability."""
    Y, logp = sample_many(tables, spec, rng, 1)
    return SampleDraw(Y[0], float(logp[0]))


def log_prob(tables: ForwardTables, spec: ProblemSpec, y) -> float:
    """Natural log of the probability of selection ``y``; ``-inf`` outside the support."""
    _require_smooth(tables, spec)
    y = np.asarray(y)
    if y.shape != (spec.n,):
        raise ValidationError(f"selection must have length {spec.n}")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("selection must be binary")
    reg = tables.reg
    yb = y.astype(np.int8)
    return float(_log_prob_kernel(reg.code, reg.gamma, spec.theta, spec.weights, tables.V, tables.Q, yb))
