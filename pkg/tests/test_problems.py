import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import central_diff, simplex_minimize, xlogy_rows
from pgminmax.errors import ConfigurationError
from pgminmax.geometry import PrimalConstraint
from pgminmax.problems import (
    DroProblem,
    DroTruncatedLogistic,
    QuadraticLoss,
    RobustMultiDist,
    TruncatedLogisticLoss,
    component_grad,
    full_dual_payoff,
    inner_max_closed_form,
    phi_alpha,
    stoch_subgrad,
    truncated_logistic,
    weak_convexity_bound,
)


def random_dro(seed, n=7, d=4, theta=0.5, alpha=2.0, radius=3.0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, d))
    b = rng.choice([-1.0, 1.0], size=n)
    return DroTruncatedLogistic(A, b, alpha=alpha, theta=theta, constraint=PrimalConstraint.ball(radius))


def naive_value(x, a, b, alpha):
    ell = math.log(1.0 + math.exp(-b * float(np.dot(a, x))))
    return alpha * math.log(1.0 + ell / alpha)


# -- truncated logistic --------------------------------------------------------

def test_value_at_origin():
    v, _ = truncated_logistic(np.zeros(3), np.array([1.0, -2.0, 0.5]), 1.0, 2.0)
    # alpha log(1 + log 2 / alpha) with alpha = 2
    assert v == pytest.approx(0.5951265695751723, abs=1e-14)
    assert v == pytest.approx(2.0 * math.log(1.0 + math.log(2.0) / 2.0), abs=1e-15)


def test_confident_prediction_limit():
    a = np.array([1.0, 1.0])
    v, g = truncated_logistic(np.array([500.0, 500.0]), a, 1.0, 2.0)
    assert v == 0.0 or v < 1e-300
    assert np.all(np.abs(g) < 1e-300)
    v, g = truncated_logistic(np.array([-500.0, -500.0]), a, 1.0, 2.0)
    assert np.isfinite(v) and np.all(np.isfinite(g))
    # loss of 1000 truncated to alpha log(1 + 500)
    assert v == pytest.approx(2.0 * math.log1p(1000.0 / 2.0), rel=1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = int(rng.integers(1, 6))
        x, a = rng.normal(size=(2, d))
        b = float(rng.choice([-1.0, 1.0]))
        alpha = float(rng.uniform(0.5, 5.0))
        v, g = truncated_logistic(x, a, b, alpha)
        assert v == pytest.approx(naive_value(x, a, b, alpha), rel=1e-12)
        fd = central_diff(lambda z: naive_value(z, a, b, alpha), x, h=1e-5)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e6), st.floats(1e-3, 1e3))
def test_truncation_never_increases_loss(s, alpha):
    v = float(phi_alpha(s, alpha))
    assert 0.0 <= v <= s * (1 + 1e-12)


def test_loss_rows_agree_with_scalar_function():
    P = random_dro(1)
    x = np.array([0.3, -0.1, 0.7, 0.2])
    vals, grads = P.payoff_and_jacobian(x)
    for i in range(P.n):
        v, g = truncated_logistic(x, P.loss.features[i], P.loss.labels[i], P.alpha)
        assert vals[i] == pytest.approx(v, rel=1e-13)
        np.testing.assert_allclose(grads[i], g, rtol=1e-12, atol=1e-15)


# -- oracles ---------------------------------------------------------------------

def test_full_payoff_at_origin_symmetric():
    P = random_dro(2)
    np.testing.assert_allclose(full_dual_payoff(P, np.zeros(P.p)), 0.5951265695751723, rtol=1e-14)


def test_full_payoff_hand_computed_two_points():
    # a_1 b_1 = (1, 0), a_2 b_2 = (0, -2); at x = (ln 3, 0.5 ln 2) the margins are ln 3 and -ln 2
    P = DroTruncatedLogistic(np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([1.0, -1.0]), alpha=1.0, theta=0.0)
    c = P.full_dual_payoff(np.array([math.log(3.0), 0.5 * math.log(2.0)]))
    l1 = math.log(1.0 + 1.0 / 3.0)
    l2 = math.log(3.0)
    np.testing.assert_allclose(c, [math.log(1 + l1), math.log(1 + l2)], rtol=1e-14)


def test_stochastic_oracle_exact_unbiasedness_by_enumeration():
    P = random_dro(3)
    rng = np.random.default_rng(5)
    x = rng.normal(size=P.p)
    y = rng.dirichlet(np.ones(P.n))
    gx_full, gy_full = P.full_grad(x, y)
    acc_x, acc_y = np.zeros(P.p), np.zeros(P.q)
    for i in range(P.n):
        gx, gy = P.sampled_grad(np.array([i]), x, y)
        acc_x += gx / P.n
        acc_y += gy / P.n
    np.testing.assert_allclose(acc_x, gx_full, atol=1e-12)
    np.testing.assert_allclose(acc_y, gy_full, atol=1e-12)


def test_full_batch_collapses_to_mean():
    P = random_dro(4)
    x = np.full(P.p, 0.2)
    y = np.full(P.n, 1.0 / P.n)
    gx, gy = stoch_subgrad(P, x, y, P.n, np.random.default_rng(0))
    gx_full, c = P.full_grad(x, y)
    np.testing.assert_allclose(gx, gx_full, atol=1e-14)
    np.testing.assert_allclose(gy, c, atol=1e-14)


def test_vertex_dual_expectation():
    P = random_dro(5)
    x = np.full(P.p, -0.4)
    y = np.zeros(P.n)
    y[0] = 1.0
    mean = sum(P.sampled_grad(np.array([i]), x, y)[0] for i in range(P.n)) / P.n
    np.testing.assert_allclose(mean, P.loss.grads(x)[0], atol=1e-13)


def test_component_gradients():
    P = random_dro(6)
    rng = np.random.default_rng(6)
    x = rng.normal(size=P.p)
    y = rng.dirichlet(np.ones(P.n))
    gx_full, gy_full = P.full_grad(x, y)
    comps = [component_grad(P, i, x, y) for i in range(P.n)]
    np.testing.assert_allclose(sum(c[0] for c in comps) / P.n, gx_full, atol=1e-12)
    np.testing.assert_allclose(sum(c[1] for c in comps) / P.n, gy_full, atol=1e-12)
    for i, (gx, gy) in enumerate(comps):
        assert np.count_nonzero(gy) == 1 and gy[i] != 0
        fd = central_diff(lambda z: P.n * y[i] * P.full_dual_payoff(z)[i], x)
        np.testing.assert_allclose(gx, fd, rtol=1e-6, atol=1e-9)
    with pytest.raises(IndexError):
        component_grad(P, P.n, x, y)


def test_second_moment_bounds_hold_empirically():
    P = random_dro(7, n=12, radius=1.0)
    rng = np.random.default_rng(7)
    x = rng.normal(size=P.p)
    x *= 0.9 / np.linalg.norm(x)
    c = P.constants
    for y in (np.full(P.n, 1.0 / P.n), rng.dirichlet(np.ones(P.n) * 0.3)):
        draws = [P.stoch_subgrad(x, y, 1, rng) for _ in range(10_000)]
        assert np.mean([g @ g for g, _ in draws]) <= c.M_x ** 2
        assert np.mean([np.abs(h).max() ** 2 for _, h in draws]) <= c.M_y ** 2


def test_batch_constants_shrink_with_batch():
    P = random_dro(8, n=20)
    c1, c5 = P.constants_for_batch(1), P.constants_for_batch(5)
    assert c5.M_x < c1.M_x and c5.M_y < c1.M_y
    assert c1.M_x == pytest.approx(P.loss.bounds(P.constraint).lipschitz * math.sqrt(P.n))


def test_sampling_without_replacement():
    P = random_dro(9, n=10)
    idx = P.sample(4, np.random.default_rng(0))
    assert len(set(idx.tolist())) == 4
    np.testing.assert_array_equal(P.sample(50, np.random.default_rng(0)), np.arange(10))
    with pytest.raises(ConfigurationError):
        P.sample(0, np.random.default_rng(0))


# -- weak convexity ---------------------------------------------------------------

def test_weak_convexity_unit_rows():
    rng = np.random.default_rng(10)
    A = rng.normal(size=(30, 5))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    P = DroTruncatedLogistic(A, rng.choice([-1.0, 1.0], size=30), alpha=2.0, theta=1.0)
    rho = weak_convexity_bound(P)
    assert rho == pytest.approx(0.5)
    # curvature probe: second differences of every f_i along random directions
    h = 1e-3
    for _ in range(200):
        x = rng.normal(size=5) * 3
        u = rng.normal(size=5)
        u /= np.linalg.norm(u)
        sd = (P.full_dual_payoff(x + h * u) - 2 * P.full_dual_payoff(x) + P.full_dual_payoff(x - h * u)) / h ** 2
        assert sd.min() + rho >= -1e-5


def test_weak_convexity_vanishes_for_large_alpha():
    A = np.eye(3)
    rhos = [weak_convexity_bound(DroTruncatedLogistic(A, np.ones(3), alpha=a, theta=0.0)) for a in (1, 1e3, 1e9)]
    assert rhos[0] > rhos[1] > rhos[2] and rhos[2] < 1e-8


def test_directional_curvature_random_instance():
    P = random_dro(11, n=15, d=3, alpha=0.7)
    rho = weak_convexity_bound(P)
    rng = np.random.default_rng(11)
    h = 1e-3
    for _ in range(300):
        x = rng.normal(size=3) * 2
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        f = lambda z: P.full_dual_payoff(z) + 0.5 * rho * (z @ z)  # noqa: E731
        sd = (f(x + h * u) - 2 * f(x) + f(x - h * u)) / h ** 2
        assert sd.min() >= -1e-8 - 1e-5


def test_smoothness_bound_dominates_hessian():
    P = random_dro(12, n=10, d=3, alpha=1.0)
    H = P.loss.bounds(P.constraint).smoothness
    rng = np.random.default_rng(12)
    h = 1e-4
    for _ in range(100):
        x = rng.normal(size=3) * 2
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        gdiff = (P.loss.grads(x + h * u) - P.loss.grads(x - h * u)) / (2 * h)
        assert np.linalg.norm(gdiff, axis=1).max() <= H * (1 + 1e-6)


# -- inner maximisation --------------------------------------------------------------

def test_inner_max_constant_vector():
    v, y = inner_max_closed_form(np.full(4, 2.5), 0.7)
    assert v == pytest.approx(2.5, abs=1e-14)
    np.testing.assert_allclose(y, 0.25, atol=1e-15)


def test_inner_max_two_point_example():
    v, y = inner_max_closed_form(np.array([1.0, 0.0]), 1.0)
    assert v == pytest.approx(0.6201145069582775, abs=1e-14)
    np.testing.assert_allclose(y, [0.7310585786300049, 0.2689414213699951], atol=1e-14)
    best, y_grid = simplex_minimize(lambda p: -(p[:, 0] - xlogy_rows(p, np.array([0.5, 0.5]))), 2, res=1e-4)
    assert v == pytest.approx(-best, abs=1e-10)
    np.testing.assert_allclose(y, y_grid, atol=1e-6)


def test_inner_max_ties_without_regulariser():
    v, y = inner_max_closed_form(np.array([3.0, 1.0, 3.0]), 0.0)
    assert v == 3.0
    np.testing.assert_array_equal(y, [0.5, 0.0, 0.5])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=10), st.floats(1e-2, 1e2))
def test_inner_max_kkt(c, theta):
    c = np.array(c)
    v, y = inner_max_closed_form(c, theta)
    n = c.size
    assert abs(y.sum() - 1) < 1e-12
    support = y > 1e-300
    stat = c[support] - theta * (np.log(n * y[support]) + 1.0)
    assert np.ptp(stat) <= 1e-8 * max(1.0, np.abs(c).max())
    assert v == pytest.approx(float(y @ c) - theta * float(np.sum(y[support] * np.log(n * y[support]))),
                              abs=1e-9 * max(1.0, np.abs(c).max()))


def test_inner_max_overflow_safe():
    v, y = inner_max_closed_form(np.array([1e5, 0.0]), 1e-3)
    assert v == pytest.approx(1e5 - 1e-3 * math.log(2), rel=1e-14)
    assert np.all(np.isfinite(y))


def test_psi_is_value_at_dual_argmax():
    P = random_dro(13)
    x = np.full(P.p, 0.1)
    y = P.dual_argmax(x)
    assert P.psi(x) == pytest.approx(P.value(x, y), abs=1e-12)
    assert P.psi(np.full(P.p, 100.0)) == math.inf


def test_psi_gradient_matches_finite_differences():
    P = random_dro(14, theta=0.8)
    x = np.array([0.2, -0.4, 0.1, 0.3])
    np.testing.assert_allclose(P.psi_grad(x), central_diff(P.psi, x), rtol=1e-6, atol=1e-9)


# -- other instances -------------------------------------------------------------------

def test_quadratic_loss_values_and_gradients():
    B = np.array([[1.0, 0.5], [-0.8, 0.3]])
    L = QuadraticLoss(2.0, B, np.array([0.2, 0.0]))
    x = np.array([0.5, -1.0])
    np.testing.assert_allclose(L.values(x), [1.25 + 0.0 + 0.2, 1.25 - 0.7])
    np.testing.assert_allclose(L.grads(x), 2.0 * x + B)


def test_linearized_loss_is_first_order_model():
    P = random_dro(15)
    x0 = np.array([0.3, 0.1, -0.2, 0.4])
    M = P.linearized(x0)
    x = x0 + np.array([0.01, -0.02, 0.0, 0.03])
    c0, J0 = P.payoff_and_jacobian(x0)
    np.testing.assert_allclose(M.full_dual_payoff(x), c0 + J0 @ (x - x0), atol=1e-14)
    assert M.constants.rho == 0.0
    assert M.loss.evaluations <= P.n


def test_robust_multi_dist():
    rng = np.random.default_rng(16)
    groups = [(rng.normal(size=(6, 3)), rng.choice([-1.0, 1.0], size=6)) for _ in range(3)]
    P = RobustMultiDist(groups, alpha=2.0, theta=0.0)
    x = rng.normal(size=3)
    c = P.full_dual_payoff(x)
    for k, (X, y) in enumerate(groups):
        L = TruncatedLogisticLoss(X, y, 2.0)
        assert c[k] == pytest.approx(L.values(x).mean(), rel=1e-13)
    yv = rng.dirichlet(np.ones(3))
    gx_full, gy_full = P.full_grad(x, yv)
    comps = [P.component_grad(i, x, yv) for i in range(P.n_components)]
    np.testing.assert_allclose(sum(g for g, _ in comps) / 6, gx_full, atol=1e-13)
    np.testing.assert_allclose(sum(h for _, h in comps) / 6, gy_full, atol=1e-13)
    gx, gy = P.stoch_subgrad(x, yv, 6, rng)
    np.testing.assert_allclose(gx, gx_full, atol=1e-13)
    np.testing.assert_allclose(gy, gy_full, atol=1e-13)
    uneven = RobustMultiDist([groups[0], (groups[1][0][:4], groups[1][1][:4])])
    with pytest.raises(ConfigurationError):
        uneven.n_components


def test_constructor_validation():
    with pytest.raises(ConfigurationError):
        DroTruncatedLogistic(np.zeros((2, 2)), np.array([1.0, 0.0]))
    with pytest.raises(ConfigurationError):
        DroTruncatedLogistic(np.zeros((2, 2)), np.array([1.0, 1.0]), alpha=0.0)
    with pytest.raises(ConfigurationError):
        DroTruncatedLogistic(np.zeros((2, 2)), np.ones(2), theta=1.0, geometry="euclidean")
    with pytest.raises(ConfigurationError):
        DroProblem(QuadraticLoss(1.0, np.zeros((0, 2)), np.zeros(0)))
