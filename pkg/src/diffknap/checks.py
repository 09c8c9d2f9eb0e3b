"""Seeded invariant suite run by ``diffknap check``.

Each property draws its own random instances from a child of the master seed,
so a report is reproducible and properties are independent of each other.
The ``fast`` level uses small sample counts; ``full`` adds Monte Carlo
sampling checks and more instances.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from diffknap.dp import ProblemSpec, forward
from diffknap.operator import hard_argmax, relaxed_operator
from diffknap.oracle import brute_max, count_feasible, enumerate_feasible, fd_gradient, gibbs_stats
from diffknap.regularizers import Regularizer
from diffknap.sampler import RngState, log_prob, sample_many
from diffknap.vjp import directional_derivative, vjp

__all__ = ["CheckResult", "PROPERTIES", "run_checks", "random_spec", "near_kink"]

SMOOTH = [Regularizer.shannon(1.0), Regularizer.gini(1.0), Regularizer.tsallis15(1.0)]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.detail}"


def random_spec(rng: np.random.Generator, n_max: int = 8, c_max: int = 12, topk: bool | None = None):
    """Random small instance; ``topk=None`` picks the mode at random."""
    n = int(rng.integers(1, n_max + 1))
    theta = rng.normal(scale=2.0, size=n)
    if topk is None:
        topk = bool(rng.integers(0, 2))
    if topk:
        return ProblemSpec.topk(theta, int(rng.integers(0, n + 1)))
    w = rng.integers(1, 5, size=n)
    return ProblemSpec.knapsack(theta, w, int(rng.integers(0, c_max + 1)))


def _smooth_op(spec, reg):
    t = forward(spec, reg)
    return t, relaxed_operator(t, spec, reg)


def near_kink(spec, reg, margin=1e-3) -> bool:
    """True if some DP cell's branch gap ``|a - b|`` lies within ``margin`` of the saturation threshold.

    Gini and Tsallis gates are only piecewise smooth; finite differences are
    meaningless across those kinks.
    """
    if not math.isfinite(reg.threshold) or reg.is_hard:
        return False
    V = forward(spec, reg).V
    for i in range(1, spec.n + 1):
        w = int(spec.weights[i - 1])
        if w > spec.capacity:
            continue
        a = spec.theta[i - 1] + V[i - 1, : spec.capacity + 1 - w]
        b = V[i - 1, w:]
        ok = np.isfinite(a) & np.isfinite(b)
        if np.any(np.abs(np.abs(a[ok] - b[ok]) - reg.threshold) < margin):
            return True
    return False


def check_hard_value(rng, scale):
    worst = 0.0
    for _ in range(20 * scale):
        s = random_spec(rng)
        best, _ = brute_max(s)
        worst = max(worst, abs(forward(s, Regularizer.none()).value - best))
        y = hard_argmax(s)
        worst = max(worst, abs(s.theta @ y - best))
    return worst <= 1e-12, f"max |dp - brute| = {worst:.2e}"


def check_gibbs(rng, scale):
    worst = 0.0
    for _ in range(20 * scale):
        s = random_spec(rng)
        gamma = float(rng.choice([0.1, 1.0, 5.0]))
        reg = Regularizer.shannon(gamma)
        logZ, mean = gibbs_stats(s.theta, s, gamma)
        t, out = _smooth_op(s, reg)
        worst = max(worst, abs(t.value - gamma * logZ) / max(1.0, abs(gamma * logZ)))
        worst = max(worst, np.abs(out.y - mean).max())
        y = enumerate_feasible(s).masks[0]
        worst = max(worst, abs(log_prob(t, s, y) - (s.theta @ y / gamma - logZ)))
    return worst <= 1e-9, f"max error vs enumeration = {worst:.2e}"


def check_hull(rng, scale):
    bad = 0
    for _ in range(20 * scale):
        s = random_spec(rng)
        for reg in SMOOTH:
            _, out = _smooth_op(s, reg)
            y = out.y
            if np.any(y < -1e-12) or np.any(y > 1 + 1e-12) or not s.is_feasible(y, atol=1e-9):
                bad += 1
            rows = out.E[1:].sum(axis=1)
            if np.abs(rows - 1).max() > 1e-9:
                bad += 1
    return bad == 0, f"{bad} hull/marginal violations"


def check_sandwich(rng, scale):
    bad = 0
    for _ in range(30 * scale):
        s = random_spec(rng, n_max=12, c_max=20)
        hard = forward(s, Regularizer.none()).value
        for reg in SMOOTH:
            gap = forward(s, reg).value - hard
            if gap < -1e-12 or gap > s.n * reg.max_gap + 1e-12:
                bad += 1
    return bad == 0, f"{bad} value-sandwich violations"


def check_gradients(rng, scale):
    worst_y = worst_v = worst_sym = 0.0
    tried = 0
    while tried < 8 * scale:
        s = random_spec(rng, n_max=6, c_max=8)
        reg = SMOOTH[tried % 3]
        if near_kink(s, reg):
            continue
        tried += 1
        t, out = _smooth_op(s, reg)
        fd = fd_gradient(lambda th: forward(s.with_theta(th), reg).value, s.theta)
        worst_y = max(worst_y, np.abs(fd - out.y).max())
        z, u = rng.normal(size=s.n), rng.normal(size=s.n)
        g = vjp(t, out, s, reg, z)

        def dd(th):
            s2 = s.with_theta(th)
            return directional_derivative(forward(s2, reg), s2, reg, z)

        worst_v = max(worst_v, np.abs(fd_gradient(dd, s.theta) - g).max())
        worst_sym = max(worst_sym, abs(g @ u - vjp(t, out, s, reg, u) @ z))
    ok = worst_y <= 1e-5 and worst_v <= 1e-4 and worst_sym <= 1e-9
    return ok, f"grad {worst_y:.1e}, vjp {worst_v:.1e}, symmetry {worst_sym:.1e}"


def check_counting(rng, scale):
    bad = 0
    for _ in range(20 * scale):
        s = random_spec(rng, n_max=14, c_max=25)
        if len(enumerate_feasible(s)) != count_feasible(s):
            bad += 1
    return bad == 0, f"{bad} count mismatches"


def check_sampling(rng, scale):
    s = ProblemSpec.knapsack([1.0, -0.5, 0.3, 0.8, -1.2], [2, 1, 3, 2, 1], 5)
    reg = Regularizer.shannon(1.0)
    t, out = _smooth_op(s, reg)
    num = 20000 * scale
    Y, _ = sample_many(t, s, RngState(int(rng.integers(0, 2**63))), num)
    mean_err = np.abs(Y.mean(axis=0) - out.y).max()
    infeasible = int(np.sum(Y @ s.weights > s.capacity))
    tol = 4.0 / np.sqrt(num)
    return mean_err <= tol and infeasible == 0, f"mean error {mean_err:.4f} (tol {tol:.4f}), {infeasible} infeasible"


Property = Callable[[np.random.Generator, int], tuple[bool, str]]

PROPERTIES: dict[str, tuple[Property, bool]] = {
    # name -> (check, included in the fast level)
    "hard_value_matches_brute_force": (check_hard_value, True),
    "shannon_matches_gibbs": (check_gibbs, True),
    "operator_in_convex_hull": (check_hull, True),
    "value_sandwich": (check_sandwich, True),
    "gradient_identities": (check_gradients, True),
    "feasible_count": (check_counting, True),
    "sampling_mean": (check_sampling, False),
}


def run_checks(level: str = "fast", seed: int = 0, only=None) -> list[CheckResult]:
    if level not in ("fast", "full"):
        raise ValueError(f"unknown level {level!r}")
    scale = 1 if level == "fast" else 5
    results = []
    for idx, (name, (fn, fast)) in enumerate(PROPERTIES.items()):
        if only is not None and name not in only:
            continue
        if level == "fast" and not fast:
            continue
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx,)))
        t0 = time.perf_counter()
        try:
            ok, detail = fn(rng, scale)
        except Exception as exc:  # a crash counts as a failed property
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results
