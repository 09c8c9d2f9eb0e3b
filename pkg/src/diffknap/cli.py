"""Command-line interface.

Instances are JSON files::

    {"mode": "knapsack", "theta": [2, 1, -1, 3], "weights": [2, 1, 3, 2],
     "capacity": 3, "regularizer": {"kind": "shannon", "gamma": 1.0}}

``weights`` may be omitted in top-k mode, where ``capacity`` is ``k``.
Structured output is JSON on stdout (sweeps are CSV).  Floats are written
with ``repr`` so they parse back to the identical double; ``-inf`` table
entries become ``null``.

Exit codes: 0 success, 2 invalid input or refused request, 3 property
failure, 4 file I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from diffknap._threads import ENV_VAR
from diffknap.dp import Mode, ProblemSpec, batch_forward, forward
from diffknap.errors import ContractError, DiffKnapError, ValidationError
from diffknap.operator import backtrack, relaxed_operator
from diffknap.regularizers import Regularizer

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PROPERTY = 3
EXIT_IO = 4

_INSTANCE_FIELDS = {"mode", "theta", "weights", "capacity", "regularizer"}
_REG_FIELDS = {"kind", "gamma"}


class InputIOError(DiffKnapError):
    """A file could not be read."""


def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputIOError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def parse_instance(doc) -> tuple[ProblemSpec, Regularizer]:
    """Validate an instance document and build the problem and regularizer."""
    if not isinstance(doc, dict):
        raise ValidationError("instance must be a JSON object")
    unknown = set(doc) - _INSTANCE_FIELDS
    if unknown:
        raise ValidationError(f"unknown instance field(s): {', '.join(sorted(unknown))}")
    for key in ("mode", "theta", "capacity"):
        if key not in doc:
            raise ValidationError(f"instance is missing {key!r}")
    mode = doc["mode"]
    if mode not in ("knapsack", "topk"):
        raise ValidationError(f"mode must be 'knapsack' or 'topk', got {mode!r}")
    theta = doc["theta"]
    if not isinstance(theta, list) or not all(_is_number(t) for t in theta):
        raise ValidationError("theta must be an array of numbers")
    capacity = doc["capacity"]
    if not isinstance(capacity, int) or isinstance(capacity, bool):
        raise ValidationError("capacity must be an integer")
    weights = doc.get("weights")
    if weights is None:
        if mode == "knapsack":
            raise ValidationError("knapsack instances need 'weights'")
        weights = [1] * len(theta)
    if not isinstance(weights, list) or not all(isinstance(w, int) and not isinstance(w, bool) for w in weights):
        raise ValidationError("weights must be an array of integers")
    spec = ProblemSpec(np.array(theta, dtype=np.float64), np.array(weights, dtype=np.int64), capacity, Mode(mode))
    return spec, _parse_regularizer(doc.get("regularizer", {"kind": "none"}))


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _parse_regularizer(doc) -> Regularizer:
    if not isinstance(doc, dict):
        raise ValidationError("regularizer must be an object")
    unknown = set(doc) - _REG_FIELDS
    if unknown:
        raise ValidationError(f"unknown regularizer field(s): {', '.join(sorted(unknown))}")
    kind = doc.get("kind")
    if kind not in ("none", "shannon", "gini", "tsallis15"):
        raise ValidationError(f"regularizer kind must be none|shannon|gini|tsallis15, got {kind!r}")
    gamma = doc.get("gamma", 1.0)
    if not _is_number(gamma):
        raise ValidationError("gamma must be a number")
    return Regularizer(kind, float(gamma))


def load_instance(path: str) -> tuple[ProblemSpec, Regularizer]:
    return parse_instance(_read_json(path))


def _floats(a) -> list:
    return [None if math.isinf(x) and x < 0 else float(x) for x in np.asarray(a, dtype=np.float64).ravel()]


def _table(a) -> list:
    return [_floats(row) for row in np.asarray(a)]


def _emit(obj, out) -> None:
    out.write(json.dumps(obj, allow_nan=False))
    out.write("\n")


def cmd_value(args, out) -> int:
    spec, reg = load_instance(args.instance)
    _emit({"value": forward(spec, reg, args.threads).value}, out)
    return EXIT_OK


def cmd_operator(args, out) -> int:
    spec, reg = load_instance(args.instance)
    tables = forward(spec, reg, args.threads)
    doc = {}
    if reg.is_hard:
        doc["y"] = _floats(backtrack(tables))
        E = None
    else:
        res = relaxed_operator(tables, spec, reg, args.threads)
        doc["y"] = _floats(res.y)
        E = res.E
    doc["value"] = tables.value
    if args.emit_tables:
        doc["V"] = _table(tables.V)
        doc["Q"] = _table(tables.Q)
        if E is not None:
            doc["E"] = _table(E)
    _emit(doc, out)
    return EXIT_OK


def cmd_sample(args, out) -> int:
    from diffknap.sampler import RngState, sample_many

    spec, reg = load_instance(args.instance)
    if reg.is_hard:
        raise ContractError("sampling needs a smoothing regularizer (kind=none is deterministic)")
    if args.num < 0:
        raise ValidationError("--num must be non-negative")
    tables = forward(spec, reg, args.threads)
    Y, logp = sample_many(tables, spec, RngState(args.seed), args.num)
    for y, lp in zip(Y, logp):
        _emit({"y": [int(v) for v in y], "log_prob": float(lp)}, out)
    return EXIT_OK


def cmd_vjp(args, out) -> int:
    from diffknap.vjp import vjp

    spec, reg = load_instance(args.instance)
    z = _read_json(args.z_path)
    if not isinstance(z, list) or not all(_is_number(v) for v in z):
        raise ValidationError("z must be a JSON array of numbers")
    if reg.is_hard:
        raise ContractError("the hard operator has no useful derivative; use a smoothing regularizer")
    tables = forward(spec, reg, args.threads)
    res = relaxed_operator(tables, spec, reg, args.threads)
    _emit({"vjp": _floats(vjp(tables, res, spec, reg, np.array(z, dtype=np.float64), threads=args.threads))}, out)
    return EXIT_OK


def _parse_coords(text: str, n: int) -> tuple[int, int]:
    try:
        i, j = (int(p) for p in text.split(","))
    except ValueError:
        raise ValidationError(f"--coords must look like 'i,j', got {text!r}") from None
    if not (0 <= i < n and 0 <= j < n) or i == j:
        raise ValidationError(f"--coords must be two distinct indices in [0, {n})")
    return i, j


def _parse_range(text: str) -> np.ndarray:
    try:
        lo, hi, steps = text.split(":")
        lo, hi, steps = float(lo), float(hi), int(steps)
    except ValueError:
        raise ValidationError(f"--range must look like 'lo:hi:steps', got {text!r}") from None
    if steps < 1 or not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValidationError("--range needs finite bounds and steps >= 1")
    return np.linspace(lo, hi, steps)


def sweep_grid(spec: ProblemSpec, reg: Regularizer, i: int, j: int, grid, threads=None):
    """``y_i + y_j`` over the grid of ``(theta_i, theta_j)`` values, row-major in ``theta_i``."""
    ti, tj = np.meshgrid(grid, grid, indexing="ij")
    thetas = np.repeat(spec.theta[None, :], ti.size, axis=0)
    thetas[:, i] = ti.ravel()
    thetas[:, j] = tj.ravel()
    ysum = np.empty(ti.size)
    for b, tables in enumerate(batch_forward(spec, thetas, reg, threads)):
        if reg.is_hard:
            y = backtrack(tables)
        else:
            y = relaxed_operator(tables, tables.spec, reg).y
        ysum[b] = y[i] + y[j]
    return ti.ravel(), tj.ravel(), ysum


def cmd_sweep(args, out) -> int:
    spec, reg = load_instance(args.instance)
    i, j = _parse_coords(args.coords, spec.n)
    grid = _parse_range(args.range)
    ti, tj, ysum = sweep_grid(spec, reg, i, j, grid, args.threads)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["theta_i", "theta_j", "y_sum"])
    for row in zip(ti, tj, ysum):
        writer.writerow([repr(float(v)) for v in row])
    return EXIT_OK


def cmd_check(args, out) -> int:
    from diffknap.checks import run_checks

    results = run_checks(args.level, args.seed)
    for r in results:
        out.write(r.line() + "\n")
    sys.stderr.write(f"checks took {sum(r.seconds for r in results):.2f}s\n")
    failed = [r.name for r in results if not r.passed]
    if failed:
        sys.stderr.write(f"property failed: {', '.join(failed)}\n")
        return EXIT_PROPERTY
    out.write(f"all {len(results)} properties passed\n")
    return EXIT_OK


def fy_demo(n=10, k=3, lr=0.1, iters=500, seed=0, reg=None, target_at_init=False, tol=1e-3) -> dict:
    """Gradient descent on the top-k Fenchel-Young loss towards a random vertex."""
    from diffknap.losses import fy_descent

    reg = Regularizer.gini(1.0) if reg is None else reg
    if reg.is_hard:
        raise ContractError("the demo needs a smoothing regularizer")
    if n < 1 or not 0 <= k <= n:
        raise ValidationError("need n >= 1 and 0 <= k <= n")
    if not math.isfinite(lr) or lr < 0:
        raise ValidationError("learning rate must be finite and non-negative")
    rng = np.random.default_rng(seed)
    theta0 = rng.normal(size=n)
    spec = ProblemSpec.topk(theta0, k)
    if target_at_init:
        target = relaxed_operator(forward(spec, reg), spec, reg).y
    else:
        target = np.zeros(n)
        target[rng.choice(n, size=k, replace=False)] = 1.0
    trace = fy_descent(spec, target, reg, lr=lr, iters=iters)
    return {
        "n": n,
        "k": k,
        "lr": lr,
        "iters": iters,
        "seed": seed,
        "regularizer": reg.to_dict(),
        "theta0": _floats(theta0),
        "target": _floats(target),
        "theta": _floats(trace.theta),
        "tol": tol,
        "converged_at": trace.first_below(tol),
        "grad_l1": trace.grad_l1,
    }


def cmd_fy_demo(args, out) -> int:
    reg = Regularizer(args.reg, args.gamma)
    doc = fy_demo(args.n, args.k, args.lr, args.iters, args.seed, reg, args.target_at_init)
    _emit(doc, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    threads = argparse.ArgumentParser(add_help=False)
    threads.add_argument(
        "--threads",
        type=int,
        default=argparse.SUPPRESS,
        help=f"worker threads for the capacity loops (default: ${ENV_VAR} or 1)",
    )
    p = argparse.ArgumentParser(prog="diffknap", description="Smoothed knapsack / top-k dynamic programs.", parents=[threads])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, with_instance=True):
        sp = sub.add_parser(name, help=help_text, parents=[threads])
        if with_instance:
            sp.add_argument("instance", help="instance JSON file")
        sp.set_defaults(func=fn)
        return sp

    add("value", cmd_value, "print the (smoothed) optimal value")
    sp = add("operator", cmd_operator, "print the relaxed selection y (hard mask for kind=none)")
    sp.add_argument("--emit-tables", action="store_true", help="also print V, Q and E")
    sp = add("sample", cmd_sample, "draw selections, one JSON line each")
    sp.add_argument("--num", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp = add("vjp", cmd_vjp, "vector-Jacobian product of the relaxed operator")
    sp.add_argument("--z-path", required=True, help="JSON array with the cotangent z")
    sp = add("sweep", cmd_sweep, "CSV of y_i + y_j over a grid of (theta_i, theta_j)")
    sp.add_argument("--coords", required=True, help="0-based item indices 'i,j'")
    sp.add_argument("--range", required=True, help="'lo:hi:steps' grid for both coordinates")
    sp = add("check", cmd_check, "run the invariant suite", with_instance=False)
    sp.add_argument("--level", choices=["fast", "full"], default="fast")
    sp.add_argument("--seed", type=int, default=0)
    sp = add("fy-demo", cmd_fy_demo, "gradient descent on a top-k Fenchel-Young loss", with_instance=False)
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--lr", type=float, default=0.1)
    sp.add_argument("--iters", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--reg", choices=["shannon", "gini", "tsallis15"], default="gini")
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--target-at-init", action="store_true", help="use y(theta0) as the target (fixed point)")
    return p


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    if not hasattr(args, "threads"):
        args.threads = None
    try:
        if args.threads is not None and args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        if args.threads is None and os.environ.get(ENV_VAR):
            from diffknap._threads import resolve_threads

            resolve_threads()  # fail early on a malformed env var
        return args.func(args, out)
    except InputIOError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO
    except ContractError as exc:
        sys.stderr.write(f"contract error: {exc}\n")
        return EXIT_VALIDATION
    except ValidationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
