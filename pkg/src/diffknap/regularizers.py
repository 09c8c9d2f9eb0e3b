"""Binary smoothed-max kernels.

Each regularizer replaces ``max(a, b)`` by ``max_q q*a + (1-q)*b - Omega(q)``
over ``q in [0, 1]``.  The kernels return the smoothed value, the maximizing
``q`` (which is also d value / d a) and ``dq/da``; ``dq/db = -dq/da``.

The scalar kernel :func:`smax2` is a numba function so the DP loops can
inline it; :func:`smoothed_max2` is the validated Python entry point.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from diffknap.errors import ConfigurationError, ValidationError

__all__ = [
    "Kind",
    "Regularizer",
    "LocalMaxResult",
    "smoothed_max2",
    "smoothed_max2_array",
    "smax2",
]

KIND_NONE = 0
KIND_SHANNON = 1
KIND_GINI = 2
KIND_TSALLIS15 = 3

# below this distance from {0, 1} the Tsallis gate counts as saturated
_TSALLIS_EPS = 1e-15


class Kind(enum.Enum):
    NONE = "none"
    SHANNON = "shannon"
    GINI = "gini"
    TSALLIS15 = "tsallis15"


_KIND_CODES = {
    Kind.NONE: KIND_NONE,
    Kind.SHANNON: KIND_SHANNON,
    Kind.GINI: KIND_GINI,
    Kind.TSALLIS15: KIND_TSALLIS15,
}


@dataclass(frozen=True)
class Regularizer:
    """Smoothing choice ``Omega`` scaled by a temperature ``gamma``.

    ``Kind.NONE`` is the hard max; its ``gamma`` is ignored.
    """

    kind: Kind = Kind.SHANNON
    gamma: float = 1.0

    def __post_init__(self):
        kind = self.kind
        if isinstance(kind, str):
            try:
                kind = Kind(kind.lower())
            except ValueError:
                raise ConfigurationError(f"unknown regularizer kind {self.kind!r}") from None
            object.__setattr__(self, "kind", kind)
        if not isinstance(kind, Kind):
            raise ConfigurationError(f"unknown regularizer kind {self.kind!r}")
        gamma = 1.0 if kind is Kind.NONE else float(self.gamma)
        if kind is not Kind.NONE and not (math.isfinite(gamma) and gamma > 0):
            raise ConfigurationError(f"gamma must be a positive finite number, got {self.gamma!r}")
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def none(cls) -> "Regularizer":
        return cls(Kind.NONE, 1.0)

    @classmethod
    def shannon(cls, gamma: float = 1.0) -> "Regularizer":
        return cls(Kind.SHANNON, gamma)

    @classmethod
    def gini(cls, gamma: float = 1.0) -> "Regularizer":
        return cls(Kind.GINI, gamma)

    @classmethod
    def tsallis15(cls, gamma: float = 1.0) -> "Regularizer":
        return cls(Kind.TSALLIS15, gamma)

    @property
    def is_hard(self) -> bool:
        return self.kind is Kind.NONE

    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]

    @property
    def max_gap(self) -> float:
        """Largest possible excess ``max_Omega(a, b) - max(a, b)``."""
        g = self.gamma
        if self.kind is Kind.SHANNON:
            return g * math.log(2.0)
        if self.kind is Kind.GINI:
            return g / 4.0
        if self.kind is Kind.TSALLIS15:
            return 4.0 * g / 3.0 * (1.0 - 2.0 ** -0.5)
        return 0.0

    @property
    def threshold(self) -> float:
        """Saturation threshold: ``|a - b| >= threshold`` forces ``q`` to 0 or 1."""
        if self.kind is Kind.GINI:
            return self.gamma
        if self.kind is Kind.TSALLIS15:
            return 2.0 * self.gamma
        if self.kind is Kind.SHANNON:
            return math.inf
        return 0.0

    def with_gamma(self, gamma: float) -> "Regularizer":
        return Regularizer(self.kind, gamma)

    def to_dict(self) -> dict:
        if self.kind is Kind.NONE:
            return {"kind": "none"}
        return {"kind": self.kind.value, "gamma": self.gamma}


@dataclass(frozen=True)
class LocalMaxResult:
    value: float
    q: float
    dq_da: float


@njit(cache=True)
def _sigmoid_pair(x):
    # returns (sigma(x), sigma(-x)) without cancellation
    if x >= 0.0:
        e = math.exp(-x)
        return 1.0 / (1.0 + e), e / (1.0 + e)
    e = math.exp(x)
    return e / (1.0 + e), 1.0 / (1.0 + e)


@njit(cache=True)
def smax2(kind, gamma, a, b):
    """Return ``(value, q, dq_da)`` for ``max_Omega(a, b)``.

    ``a`` is the pick branch and ``b`` the skip branch; ``-inf`` marks an
    unreachable branch.
    """
    if b == -np.inf:
        if a == -np.inf:
            return -np.inf, 0.0, 0.0
        return a, 1.0, 0.0
    if a == -np.inf:
        return b, 0.0, 0.0

    d = a - b
    if kind == KIND_SHANNON:
        x = d / gamma
        q, r = _sigmoid_pair(x)
        value = max(a, b) + gamma * math.log1p(math.exp(-abs(x)))
        return value, q, q * r / gamma

    if kind == KIND_GINI:
        if d >= gamma:
            return a, 1.0, 0.0
        if d <= -gamma:
            return b, 0.0, 0.0
        q = (d + gamma) / (2.0 * gamma)
        return b + q * d + gamma * q * (1.0 - q), q, 0.5 / gamma

    if kind == KIND_TSALLIS15:
        t = d / (2.0 * gamma)
        if t >= 1.0:
            return a, 1.0, 0.0
        if t <= -1.0:
            return b, 0.0, 0.0
        s = math.sqrt(2.0 - t * t)
        u = (1.0 - t) * (1.0 + t)
        # q = (1 + t*s)/2, rewritten so the small one of q, 1-q is exact
        if t < 0.0:
            q = u * u / (2.0 * (1.0 - t * s))
            r = 1.0 - q
        else:
            r = u * u / (2.0 * (1.0 + t * s))
            q = 1.0 - r
        value = b + q * d + (4.0 * gamma / 3.0) * (1.0 - q * math.sqrt(q) - r * math.sqrt(r))
        if q <= _TSALLIS_EPS or r <= _TSALLIS_EPS:
            return value, q, 0.0
        dq = 1.0 / (gamma * (1.0 / math.sqrt(q) + 1.0 / math.sqrt(r)))
        return value, q, dq

    # hard max; ties go to the skip branch
    if a > b:
        return a, 1.0, 0.0
    return b, 0.0, 0.0


@njit(cache=True)
def _smax2_loop(kind, gamma, a, b, value, q, dq):
    for j in range(a.shape[0]):
        value[j], q[j], dq[j] = smax2(kind, gamma, a[j], b[j])


def _check_pair(a, b):
    if np.isnan(a).any() or np.isnan(b).any():
        raise ValidationError("smoothed max inputs must not be NaN")
    if (np.isposinf(a) & np.isposinf(b)).any():
        raise ValidationError("smoothed max is undefined for two +inf inputs")


def smoothed_max2(reg: Regularizer, a: float, b: float) -> LocalMaxResult:
    """Smoothed maximum of two extended reals with its local derivatives."""
    a = float(a)
    b = float(b)
    _check_pair(np.array([a]), np.array([b]))
    value, q, dq = smax2(reg.code, reg.gamma, a, b)
    return LocalMaxResult(float(value), float(q), float(dq))


def smoothed_max2_array(reg: Regularizer, a, b):
    """Elementwise :func:`smoothed_max2`; returns ``(value, q, dq_da)`` arrays."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    shape = a.shape
    a = np.ascontiguousarray(a).ravel()
    b = np.ascontiguousarray(b).ravel()
    _check_pair(a, b)
    value = np.empty_like(a)
    q = np.empty_like(a)
    dq = np.empty_like(a)
    _smax2_loop(reg.code, reg.gamma, a, b, value, q, dq)
    return value.reshape(shape), q.reshape(shape), dq.reshape(shape)
