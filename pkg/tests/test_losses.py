import numpy as np
import pytest

from diffknap.checks import near_kink, random_spec
from diffknap.dp import ProblemSpec, forward
from diffknap.errors import ContractError, ValidationError
from diffknap.losses import fy_descent, fy_loss_grad, fy_loss_value, fy_reg_grad, fy_reg_value
from diffknap.operator import hard_argmax, relaxed_operator
from diffknap.oracle import enumerate_feasible, fd_gradient, gibbs_stats
from diffknap.regularizers import Regularizer
from diffknap.sampler import log_prob

SHANNON = Regularizer.shannon(1.0)
SMOOTH = [SHANNON, Regularizer.gini(1.0), Regularizer.tsallis15(1.0)]


def _y(spec, reg):
    return relaxed_operator(forward(spec, reg), spec, reg).y


@pytest.mark.parametrize("reg", SMOOTH, ids=str)
def test_grad_zero_at_fixed_point(reg, knap_fig):
    g = fy_loss_grad(knap_fig.theta, _y(knap_fig, reg), knap_fig, reg)
    np.testing.assert_array_equal(g.grad, 0.0)


def test_topk_grad_sums_to_zero(rng):
    s = ProblemSpec.topk(rng.normal(size=8), 3)
    target = np.zeros(8)
    target[[0, 4, 5]] = 1
    assert fy_loss_grad(s.theta, target, s, SHANNON).grad.sum() == pytest.approx(0.0, abs=1e-12)


def test_grad_matches_fd_of_loss(knap_fig):
    v = np.array([0.0, 1.0, 0.0, 1.0])
    g = fy_loss_grad(knap_fig.theta, v, knap_fig, SHANNON).grad
    fd = fd_gradient(lambda th: fy_loss_value(th, v, knap_fig, SHANNON), knap_fig.theta)
    np.testing.assert_allclose(g, fd, atol=1e-5)


def test_vertex_loss_is_negative_log_likelihood(rng):
    for _ in range(30):
        s = random_spec(rng, n_max=8, c_max=10)
        gamma = float(rng.uniform(0.2, 3))
        reg = Regularizer.shannon(gamma)
        t = forward(s, reg)
        for v in enumerate_feasible(s).masks[:5]:
            loss = fy_loss_value(s.theta, v, s, reg)
            assert loss >= 0
            assert loss == pytest.approx(-gamma * log_prob(t, s, v), abs=1e-10)


@pytest.mark.parametrize("reg", SMOOTH, ids=str)
def test_fractional_loss(reg, rng):
    s = ProblemSpec.knapsack(rng.normal(size=5), [1, 2, 1, 3, 2], 4)
    y = _y(s.with_theta(rng.normal(size=5)), reg)
    other = rng.normal(size=5)
    a, b = fy_loss_value(s.theta, y, s, reg), fy_loss_value(other, y, s, reg)
    assert a >= 0 and b >= 0
    # the conjugate term cancels in differences
    diff = forward(s, reg).value - forward(s.with_theta(other), reg).value - (s.theta - other) @ y
    assert a - b == pytest.approx(diff, abs=1e-6)
    assert fy_loss_value(s.theta, _y(s, reg), s, reg) == pytest.approx(0.0, abs=1e-7)


@pytest.mark.parametrize("reg", SMOOTH, ids=str)
def test_loss_convex_midpoint(reg, rng):
    for _ in range(50):
        s = random_spec(rng, n_max=8, c_max=10)
        v = enumerate_feasible(s).masks[int(rng.integers(len(enumerate_feasible(s))))]
        t1, t2 = rng.normal(scale=2, size=(2, s.n))
        mid = fy_loss_value((t1 + t2) / 2, v, s, reg)
        assert mid <= (fy_loss_value(t1, v, s, reg) + fy_loss_value(t2, v, s, reg)) / 2 + 1e-12


@pytest.mark.parametrize("reg", SMOOTH, ids=str)
def test_reg_value_zero_at_origin(reg, knap_fig):
    assert fy_reg_value(np.zeros(4), knap_fig, reg) == 0.0
    np.testing.assert_allclose(fy_reg_grad(np.zeros(4), knap_fig, reg), 0.0, atol=1e-15)


def test_reg_value_is_kl_for_shannon(rng):
    for _ in range(50):
        s = random_spec(rng, n_max=10, c_max=12)
        logZ, _ = gibbs_stats(s.theta, s, 1.0)
        Y = enumerate_feasible(s).masks
        p = np.exp(Y @ s.theta - logZ)
        kl = float(np.sum(p * np.log(len(Y) * p)))
        assert fy_reg_value(s.theta, s, SHANNON) == pytest.approx(kl, abs=1e-9)


def test_reg_value_scales_with_gamma(knap_fig):
    # gamma * KL(pi_{theta/gamma} || uniform)
    gamma = 0.4
    reg = Regularizer.shannon(gamma)
    assert fy_reg_value(knap_fig.theta, knap_fig, reg) == pytest.approx(
        gamma * fy_reg_value(knap_fig.theta / gamma, knap_fig, SHANNON), abs=1e-12
    )


@pytest.mark.parametrize("reg", SMOOTH, ids=str)
def test_reg_nonnegative_and_grad_fd(reg, rng):
    for _ in range(40):
        s = random_spec(rng, n_max=7, c_max=10)
        assert fy_reg_value(s.theta, s, reg) >= -1e-12
    done = 0
    while done < 15:
        s = random_spec(rng, n_max=7, c_max=10)
        if near_kink(s, reg):
            continue
        done += 1
        fd = fd_gradient(lambda th: fy_reg_value(th, s, reg), s.theta)
        np.testing.assert_allclose(fy_reg_grad(s.theta, s, reg), fd, atol=1e-4)


@pytest.mark.parametrize("reg", SMOOTH, ids=str)
def test_reg_constant_topk(reg):
    s = ProblemSpec.topk(np.full(6, 2.5), 2)
    assert fy_reg_value(s.theta, s, reg) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(fy_reg_grad(s.theta, s, reg), 0.0, atol=1e-12)


def test_gini_saturated_reg_value():
    s = ProblemSpec.topk([9.0, -9.0, 6.0, 0.0, -3.0], 2)
    reg = Regularizer.gini(0.5)
    v = hard_argmax(s)
    np.testing.assert_array_equal(_y(s, reg), v)
    # every gate saturated: max_Omega(theta) = <theta, v>, so only max_Omega(0) remains
    at_zero = forward(s.with_theta(np.zeros(5)), reg).value
    assert at_zero > 0
    assert fy_reg_value(s.theta, s, reg) == pytest.approx(at_zero, abs=1e-12)


def test_descent_reaches_tolerance():
    rng = np.random.default_rng(0)
    s = ProblemSpec.topk(rng.normal(size=10), 3)
    target = np.zeros(10)
    target[rng.choice(10, 3, replace=False)] = 1
    trace = fy_descent(s, target, Regularizer.gini(1.0), lr=0.1, iters=500)
    assert trace.first_below(1e-3) is not None
    assert len(trace.grad_l1) == 501
    shannon = fy_descent(s, target, SHANNON, lr=0.1, iters=500)
    assert 0 < shannon.grad_l1[-1] < shannon.grad_l1[0]


def test_descent_flat_and_fixed_point(topk_fig):
    v = np.array([1.0, 0, 1, 0, 1])
    flat = fy_descent(topk_fig, v, SHANNON, lr=0.0, iters=5)
    assert len(set(flat.grad_l1)) == 1
    fixed = fy_descent(topk_fig, _y(topk_fig, SHANNON), SHANNON, iters=5)
    assert fixed.first_below(1e-12) == 0


def test_errors(knap_fig, topk_fig):
    with pytest.raises(ValidationError):
        fy_loss_grad(knap_fig.theta, [1, 1, 1, 1], knap_fig, SHANNON)
    with pytest.raises(ValidationError):
        fy_loss_grad(topk_fig.theta, [1, 0, 0, 0, 0], topk_fig, SHANNON)
    with pytest.raises(ValidationError):
        fy_loss_grad(knap_fig.theta, [1.5, 0, 0, 0], knap_fig, SHANNON)
    with pytest.raises(ContractError):
        fy_loss_grad(knap_fig.theta, [0, 1, 0, 1], knap_fig, Regularizer.none())
    with pytest.raises(ContractError):
        fy_reg_value(knap_fig.theta, knap_fig, Regularizer.none())
