"""Directional derivatives and vector-Jacobian products of the relaxed operator.

``Vdot[i, c]`` is the derivative of ``V[i, c]`` along a direction ``z``; it
obeys the same recursion as ``V`` with the local gates frozen, so
``Vdot[n, C] = <y(theta), z>``.  Differentiating that recursion backwards
(``Edot[i, c] = d Vdot[n, C] / d V[i, c]``) gives ``z^T dy/dtheta``, which is
also ``(dy/dtheta) z`` because the Jacobian is a Hessian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from diffknap._threads import numba_threads, resolve_threads
from diffknap.dp import ForwardTables, ProblemSpec, check_tables
from diffknap.errors import ContractError, ValidationError
from diffknap.operator import OperatorOutput
from diffknap.regularizers import Regularizer

__all__ = ["VjpWorkspace", "directional_derivative", "vjp"]


@dataclass
class VjpWorkspace:
    """Reusable ``Vdot`` / ``Edot`` buffers for instances of one ``(n, C)`` shape."""

    Vdot: np.ndarray
    Edot: np.ndarray

    @classmethod
    def allocate(cls, n: int, capacity: int) -> "VjpWorkspace":
        return cls(np.zeros((n + 1, capacity + 1)), np.zeros((n + 1, capacity + 1)))

    def fits(self, spec: ProblemSpec) -> bool:
        shape = (spec.n + 1, spec.capacity + 1)
        return self.Vdot.shape == shape and self.Edot.shape == shape


def _vdot_impl(w, Q, z, Vdot):
    n = Q.shape[0] - 1
    C = Q.shape[1] - 1
    for c in range(C + 1):
        Vdot[0, c] = 0.0
    for i in range(1, n + 1):
        wi = w[i - 1]
        zi = z[i - 1]
        Vdot[i, 0] = 0.0
        for c in prange(1, C + 1):
            if wi > c:
                Vdot[i, c] = Vdot[i - 1, c]
            else:
                q = Q[i, c]
                Vdot[i, c] = (Vdot[i - 1, c - wi] + zi) * q + Vdot[i - 1, c] * (1.0 - q)


def _edot_impl(w, Q, DQ, E, Vdot, z, Edot):
    n = Q.shape[0] - 1
    C = Q.shape[1] - 1
    for c in range(C + 1):
        Edot[n, c] = 0.0
    for i in range(n - 1, 0, -1):
        wn = w[i]  # weight of item i + 1
        zn = z[i]
        Edot[i, 0] = 0.0
        for c in prange(1, C + 1):
            acc = Edot[i + 1, c] * (1.0 - Q[i + 1, c])
            if wn <= c:
                # skip edge of cell (i+1, c): dQ/dV[i, c] = -DQ
                acc -= E[i + 1, c] * (Vdot[i, c - wn] - Vdot[i, c] + zn) * DQ[i + 1, c]
            if c + wn <= C:
                # pick edge into cell (i+1, c+w): dQ/dV[i, c] = +DQ
                acc += Edot[i + 1, c + wn] * Q[i + 1, c + wn]
                acc += E[i + 1, c + wn] * (Vdot[i, c] - Vdot[i, c + wn] + zn) * DQ[i + 1, c + wn]
            Edot[i, c] = acc


def _assemble_impl(w, Q, DQ, E, Vdot, Edot, z, out):
    n = Q.shape[0] - 1
    C = Q.shape[1] - 1
    for i in prange(1, n + 1):
        wi = w[i - 1]
        zi = z[i - 1]
        acc = 0.0
        for c in range(wi, C + 1):
            acc += Edot[i, c] * Q[i, c]
            acc += E[i, c] * (Vdot[i - 1, c - wi] - Vdot[i - 1, c] + zi) * DQ[i, c]
        out[i - 1] = acc


_vdot_serial = njit(cache=True)(_vdot_impl)
_vdot_parallel = njit(cache=True, parallel=True)(_vdot_impl)
_edot_serial = njit(cache=True)(_edot_impl)
_edot_parallel = njit(cache=True, parallel=True)(_edot_impl)
_assemble_serial = njit(cache=True)(_assemble_impl)
_assemble_parallel = njit(cache=True, parallel=True)(_assemble_impl)


def _prepare(tables, spec, reg, z, workspace):
    if reg.is_hard:
        raise ContractError("derivatives of the hard operator are zero almost everywhere; use a smoothing regularizer")
    check_tables(tables, spec, reg)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (spec.n,):
        raise ValidationError(f"direction must have length {spec.n}, got shape {z.shape}")
    if workspace is None:
        workspace = VjpWorkspace.allocate(spec.n, spec.capacity)
    elif not workspace.fits(spec):
        raise ValidationError("workspace shape does not match the instance")
    return np.ascontiguousarray(z), workspace


def directional_derivative(
    tables: ForwardTables,
    spec: ProblemSpec,
    reg: Regularizer,
    z,
    workspace: VjpWorkspace | None = None,
    threads: int | None = None,
) -> float:
    """``<y(theta), z>`` computed by the tangent recursion (fills ``workspace.Vdot``)."""
    z, ws = _prepare(tables, spec, reg, z, workspace)
    threads = resolve_threads(threads)
    if threads == 1:
        _vdot_serial(spec.weights, tables.Q, z, ws.Vdot)
    else:
        with numba_threads(threads):
            _vdot_parallel(spec.weights, tables.Q, z, ws.Vdot)
    return float(ws.Vdot[-1, -1])


def vjp(
    tables: ForwardTables,
    op_out: OperatorOutput,
    spec: ProblemSpec,
    reg: Regularizer,
    z,
    workspace: VjpWorkspace | None = None,
    threads: int | None = None,
) -> np.ndarray:
    """``z^T dy/dtheta`` for the relaxed operator ``y``."""
    z, ws = _prepare(tables, spec, reg, z, workspace)
    if op_out.E.shape != tables.Q.shape:
        raise ValidationError("operator output does not match the forward tables")
    threads = resolve_threads(threads)
    out = np.zeros(spec.n)
    w = spec.weights
    args_q = (w, tables.Q)
    if threads == 1:
        _vdot_serial(*args_q, z, ws.Vdot)
        _edot_serial(*args_q, tables.DQ, op_out.E, ws.Vdot, z, ws.Edot)
        _assemble_serial(*args_q, tables.DQ, op_out.E, ws.Vdot, ws.Edot, z, out)
    else:
        with numba_threads(threads):
            _vdot_parallel(*args_q, z, ws.Vdot)
            _edot_parallel(*args_q, tables.DQ, op_out.E, ws.Vdot, z, ws.Edot)
            _assemble_parallel(*args_q, tables.DQ, op_out.E, ws.Vdot, ws.Edot, z, out)
    return out
