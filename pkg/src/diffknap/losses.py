"""Fenchel-Young losses built on the smoothed DP value.

For a target ``y`` in the convex hull of feasible selections the loss
``max_Omega(theta) + Omega*(y) - <theta, y>`` has gradient
``y_Omega(theta) - y``; training only ever needs that gradient.

The loss *value* needs the conjugate ``Omega*(y)``.  It is exact (zero) for
0/1 targets; for fractional targets :func:`fy_loss_value` obtains it by
numerically minimizing ``max_Omega(eta) - <eta, y>`` over ``eta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from diffknap.dp import ProblemSpec, forward
from diffknap.errors import ContractError, ValidationError
from diffknap.operator import relaxed_operator
from diffknap.regularizers import Regularizer
from diffknap.vjp import vjp

__all__ = [
    "FyGradient",
    "FyTrace",
    "fy_loss_grad",
    "fy_loss_value",
    "fy_reg_value",
    "fy_reg_grad",
    "fy_descent",
]

_HULL_TOL = 1e-9


@dataclass(frozen=True)
class FyGradient:
    grad: np.ndarray
    y_pred: np.ndarray


@dataclass
class FyTrace:
    """Gradient-descent curve of the Fenchel-Young loss towards a fixed target."""

    target: np.ndarray
    theta0: np.ndarray
    theta: np.ndarray
    grad_l1: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)

    def first_below(self, tol: float) -> int | None:
        for t, g in enumerate(self.grad_l1):
            if g <= tol:
                return t
        return None


def _smooth(reg: Regularizer):
    if reg.is_hard:
        raise ContractError("Fenchel-Young losses need a smoothing regularizer")


def _check_target(y, spec: ProblemSpec) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (spec.n,):
        raise ValidationError(f"target must have length {spec.n}")
    if np.any(~np.isfinite(y)) or np.any(y < -_HULL_TOL) or np.any(y > 1 + _HULL_TOL):
        raise ValidationError("target must lie in [0, 1]^n")
    if not spec.is_feasible(y, atol=_HULL_TOL):
        what = "sum to k" if spec.is_topk else "satisfy <w, y> <= C"
        raise ValidationError(f"target must {what}")
    return y


def _operator(spec, reg):
    tables = forward(spec, reg)
    return tables, relaxed_operator(tables, spec, reg)


def fy_loss_grad(theta, y_target, spec: ProblemSpec, reg: Regularizer) -> FyGradient:
    """Gradient ``y_Omega(theta) - y_target`` of the Fenchel-Young loss."""
    _smooth(reg)
    spec = spec.with_theta(theta)
    y_target = _check_target(y_target, spec)
    _, out = _operator(spec, reg)
    return FyGradient(out.y - y_target, out.y)


def _is_vertex(y) -> bool:
    return bool(np.all((y == 0.0) | (y == 1.0)))


def fy_loss_value(theta, y_target, spec: ProblemSpec, reg: Regularizer, tol: float = 1e-12) -> float:
    """Loss value ``L(theta; y_target)``.

    Exact for binary feasible targets, where the conjugate vanishes.  For a
    fractional target the conjugate is found with L-BFGS and the result is
    accurate to roughly ``tol`` (convergence slows near the hull boundary).
    """
    _smooth(reg)
    spec = spec.with_theta(theta)
    y = _check_target(y_target, spec)

    def gap(eta):
        s = spec.with_theta(eta)
        tables, out = _operator(s, reg)
        return tables.value - eta @ y, out.y - y

    at_theta, _ = gap(spec.theta)
    if _is_vertex(y):
        return float(at_theta)
    res = minimize(gap, spec.theta.copy(), jac=True, method="L-BFGS-B", options={"ftol": tol, "gtol": 1e-10, "maxiter": 2000})
    return float(at_theta - min(res.fun, at_theta))


def fy_reg_value(theta, spec: ProblemSpec, reg: Regularizer) -> float:
    """Fenchel-Young regularizer ``max_Omega(0) - max_Omega(theta) + <theta, y_Omega(theta)>``.

    Equals ``gamma * KL(pi_theta || uniform)`` under Shannon smoothing.
    """
    _smooth(reg)
    spec = spec.with_theta(theta)
    tables, out = _operator(spec, reg)
    at_zero = forward(spec.with_theta(np.zeros(spec.n)), reg).value
    return float(at_zero - tables.value + spec.theta @ out.y)


def fy_reg_grad(theta, spec: ProblemSpec, reg: Regularizer) -> np.ndarray:
    """Gradient of :func:`fy_reg_value`: the Jacobian of ``y_Omega`` applied to ``theta``."""
    _smooth(reg)
    spec = spec.with_theta(theta)
    tables, out = _operator(spec, reg)
    return vjp(tables, out, spec, reg, spec.theta)


def fy_descent(
    spec: ProblemSpec,
    target,
    reg: Regularizer,
    lr: float = 0.1,
    iters: int = 500,
    theta0=None,
) -> FyTrace:
    """Plain gradient descent ``theta <- theta - lr * (y_Omega(theta) - target)``.

    ``theta0`` defaults to ``spec.theta``.  Records ``||grad||_1`` and the loss
    before every step.
    """
    _smooth(reg)
    if iters < 0:
        raise ValidationError("iters must be non-negative")
    theta = np.array(spec.theta if theta0 is None else theta0, dtype=np.float64)
    target = _check_target(target, spec)
    trace = FyTrace(target=target, theta0=theta.copy(), theta=theta)
    vertex = _is_vertex(target)
    for _ in range(iters + 1):
        s = spec.with_theta(theta)
        tables, out = _operator(s, reg)
        grad = out.y - target
        trace.grad_l1.append(float(np.abs(grad).sum()))
        trace.loss.append(float(tables.value - theta @ target) if vertex else float("nan"))
        if len(trace.grad_l1) > iters:
            break
        theta = theta - lr * grad
    trace.theta = theta
    return trace
