import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbenv.fbe import (CompositeProblem, NonFiniteError, fb_cache, fbe_gradient, fbe_moreau_form,
                       gamma_condition)
from fbenv.linops import DenseOperator
from fbenv.oracle import envelope_grid_oracle, fd_gradient, reference_solution
from fbenv.prox import l1_norm, nonneg_indicator, zero_function
from fbenv.smooth import FunctionOracle, quadratic_loss


def half_square(n=1, lipschitz=1.0):
    return FunctionOracle(lambda x: (0.5 * float(x @ x), x.copy()), n, hvp=lambda x, v: v.copy(),
                          lipschitz=lipschitz)


def orthant_problem(n=1):
    return CompositeProblem(half_square(n), nonneg_indicator(n))


def test_critical_point_example():
    c = fb_cache(orthant_problem(), 0.5, np.array([0.0]))
    assert c.t_x[0] == 0.0 and c.r_x[0] == 0.0 and c.fbe == 0.0


def test_closed_form_example():
    c = fb_cache(orthant_problem(), 0.5, np.array([-1.0]))
    assert c.t_x[0] == 0.0 and c.r_x[0] == -2.0 and c.fbe == pytest.approx(0.5, abs=1e-15)


def test_two_envelope_formulas_agree(small_lasso):
    rng = np.random.default_rng(0)
    gamma = 0.8 / small_lasso.lipschitz
    for _ in range(20):
        x = rng.standard_normal(20)
        a = fb_cache(small_lasso, gamma, x).fbe
        b = fbe_moreau_form(small_lasso, gamma, x)
        assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


def test_cache_fields_consistent(small_lasso):
    x = np.random.default_rng(1).standard_normal(20)
    c = fb_cache(small_lasso, 0.01, x)
    assert np.array_equal(c.r_x, (x - c.t_x) / 0.01)
    expected = c.f_x - c.gamma * c.grad_f_x @ c.r_x + 0.5 * c.gamma * c.r_norm**2 + c.g_at_t
    assert c.fbe == expected


def test_cache_one_evaluation_one_prox(small_lasso):
    small_lasso.reset_counters()
    fb_cache(small_lasso, 0.01, np.ones(20))
    c = small_lasso.counters()
    assert (c["f_evals"], c["prox_calls"]) == (1, 1)


def test_point_outside_domain_is_fine():
    c = fb_cache(orthant_problem(2), 0.5, np.array([-3.0, 1.0]))
    assert np.isfinite(c.fbe)


def test_non_finite_raises():
    with pytest.raises(NonFiniteError):
        fb_cache(orthant_problem(), 0.5, np.array([np.nan]))
    with pytest.raises(ValueError):
        fb_cache(orthant_problem(), 0.0, np.array([1.0]))


def test_gradient_zero_at_critical_point():
    c = fb_cache(orthant_problem(), 0.5, np.array([0.0]))
    assert np.array_equal(fbe_gradient(orthant_problem(), c), [0.0])


def test_gradient_example():
    p = orthant_problem()
    c = fb_cache(p, 0.5, np.array([-1.0]))
    g = fbe_gradient(p, c)
    assert g[0] == pytest.approx(-1.0)
    fd = fd_gradient(lambda z: fb_cache(p, 0.5, z).fbe, np.array([-1.0]))
    assert fd[0] == pytest.approx(-1.0, rel=1e-6)


def test_gradient_vs_fd_lasso(small_lasso):
    rng = np.random.default_rng(2)
    gamma = 0.5 / small_lasso.lipschitz
    for _ in range(50):
        x = rng.standard_normal(20)
        g = fbe_gradient(small_lasso, fb_cache(small_lasso, gamma, x))
        fd = fd_gradient(lambda z: fb_cache(small_lasso, gamma, z).fbe, x)
        assert np.linalg.norm(fd - g) <= 1e-5 * np.linalg.norm(g)


def test_gamma_condition_never_holds_for_convex_quadratic(small_lasso):
    rng = np.random.default_rng(3)
    beta = 0.05
    gamma = 0.95 * (1 - beta) / small_lasso.lipschitz
    for _ in range(200):
        c = fb_cache(small_lasso, gamma, 5 * rng.standard_normal(20))
        assert not gamma_condition(beta, c, small_lasso.objective(c.t_x))


def test_gamma_condition_zero_residual():
    p = orthant_problem()
    c = fb_cache(p, 0.5, np.array([0.0]))
    assert not gamma_condition(0.05, c, p.objective(c.t_x))


def test_gamma_condition_large_step():
    # f = x^2/2, g = 0, gamma = 3, w = 1: T = -2, R = 1, phi(T) = 2, phi_gamma(w) = -1
    p = CompositeProblem(half_square(1, lipschitz=0.1), zero_function(1))
    c = fb_cache(p, 3.0, np.array([1.0]))
    assert (c.t_x[0], c.r_x[0], c.fbe) == (-2.0, 1.0, -1.0)
    assert gamma_condition(0.05, c, p.objective(c.t_x))


def test_envelope_equals_objective_at_critical_point():
    A = DenseOperator(np.random.default_rng(4).standard_normal((15, 8)))
    p = CompositeProblem(quadratic_loss(A, np.ones(15)), l1_norm(0.5, 8))
    ref = reference_solution(p)
    phi = p.objective(ref.x)
    assert abs(fb_cache(p, 0.9 / p.lipschitz, ref.x).fbe - phi) <= 1e-8 * (1 + abs(phi))


@pytest.mark.parametrize("gamma", [0.1, 0.4, 0.8])
def test_moreau_sandwich_scalar(gamma):
    # f = a x^2 / 2 with a = 1, g = |x|: compare with Moreau envelopes of phi on a grid
    p = CompositeProblem(half_square(), l1_norm(1.0, 1))
    phi = lambda u: 0.5 * u**2 + np.abs(u)  # noqa: E731
    grid = np.arange(-12.0, 12.0, 1e-4)
    for x in np.linspace(-4, 4, 17):
        fbe = fb_cache(p, gamma, np.array([x])).fbe
        upper = envelope_grid_oracle(phi, gamma / (1 + gamma), x, grid=grid)
        lower = envelope_grid_oracle(phi, gamma / (1 - gamma), x, grid=grid)
        plain = envelope_grid_oracle(phi, gamma, x, grid=grid)
        tol = 1e-7
        assert lower - tol <= fbe <= upper + tol
        assert fbe <= plain + tol


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), frac=st.sampled_from([0.1, 0.5, 0.95, 1.0, 1.5]))
def test_envelope_bounds_property(seed, frac):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((6, 9))
    L = float(np.linalg.eigvalsh(A.T @ A)[-1])
    p = CompositeProblem(quadratic_loss(DenseOperator(A), rng.standard_normal(6), lipschitz=L),
                         l1_norm(0.3, 9))
    gamma = frac / L
    x = 2 * rng.standard_normal(9)
    c = fb_cache(p, gamma, x)
    tol = 1e-10 * (1 + abs(c.fbe))
    r2 = c.r_norm**2
    phi_t = p.objective(c.t_x)
    assert c.fbe <= p.objective(x) - 0.5 * gamma * r2 + tol
    assert phi_t <= c.fbe - 0.5 * gamma * (1 - gamma * L) * r2 + tol
    if gamma <= 1 / L:
        assert phi_t <= c.fbe + tol


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), gamma=st.floats(0.01, 1.99))
def test_orthant_closed_form_property(seed, gamma):
    x = 3 * np.random.default_rng(seed).standard_normal(5)
    u = (1 - gamma) * x
    closed = 0.5 * (1 - gamma) * x @ x + np.sum((u - np.maximum(u, 0)) ** 2) / (2 * gamma)
    assert fb_cache(orthant_problem(5), gamma, x).fbe == pytest.approx(closed, abs=1e-12, rel=1e-12)
