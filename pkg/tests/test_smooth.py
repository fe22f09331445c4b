import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbenv.linops import DenseOperator
from fbenv.oracle import fd_gradient
from fbenv.smooth import (LIPSCHITZ_SAFETY, FunctionOracle, hvp_or_fd, logistic_loss, quadratic_loss,
                          robust_loss)


def _instances(seed=0):
    rng = np.random.default_rng(seed)
    A = DenseOperator(rng.standard_normal((10, 6)))
    return {
        "quadratic": quadratic_loss(A, rng.standard_normal(10)),
        "logistic": logistic_loss(A, np.where(rng.standard_normal(10) > 0, 1.0, -1.0)),
        "robust": robust_loss(A, rng.standard_normal(10)),
    }


def test_quadratic_scalar_example():
    f = quadratic_loss(DenseOperator([[1.0]]), [0.0])
    fx, gx = f.eval_fg(np.array([3.0]))
    assert fx == 4.5 and np.array_equal(gx, [3.0])


def test_quadratic_hvp_independent_of_x():
    f = _instances()["quadratic"]
    rng = np.random.default_rng(1)
    v = rng.standard_normal(6)
    np.testing.assert_allclose(f.hvp(rng.standard_normal(6), v), f.hvp(np.zeros(6), v), atol=1e-12)


def test_quadratic_gradient_vs_fd():
    rng = np.random.default_rng(2)
    f = quadratic_loss(DenseOperator(rng.standard_normal((10, 20))), rng.standard_normal(10))
    x = rng.standard_normal(20)
    fd = fd_gradient(f.value, x)
    g = f.gradient(x)
    assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)


def test_logistic_at_zero():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((8, 5))
    b = np.array([1, -1, 1, 1, -1, -1, 1, -1], dtype=float)
    fx, gx = logistic_loss(DenseOperator(A), b).eval_fg(np.zeros(5))
    assert fx == pytest.approx(8 * np.log(2.0))
    np.testing.assert_allclose(gx, -0.5 * A.T @ b, atol=1e-14)


def test_logistic_large_margin_no_overflow():
    f = logistic_loss(DenseOperator([[40.0]]), [1.0])
    with np.errstate(over="raise", invalid="raise"):
        assert 0 <= f.value(np.array([1.0])) <= 1e-15
        assert f.value(np.array([-1000.0])) == pytest.approx(40000.0)


def test_logistic_rejects_bad_labels():
    with pytest.raises(ValueError, match="row 1"):
        logistic_loss(DenseOperator(np.eye(2)), [1.0, 0.0])


def test_logistic_hvp_vs_fd():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((8, 5))
    f = logistic_loss(DenseOperator(A), np.where(rng.standard_normal(8) > 0, 1.0, -1.0))
    x, v = rng.standard_normal(5), rng.standard_normal(5)
    h = 1e-6
    fd = (f.gradient(x + h * v) - f.gradient(x - h * v)) / (2 * h)
    hv = f.hvp(x, v)
    assert np.linalg.norm(fd - hv) <= 1e-5 * np.linalg.norm(hv)


def test_robust_examples():
    f = robust_loss(DenseOperator([[1.0]]), [0.0])
    assert f.eval_fg(np.array([0.0])) == (0.0, pytest.approx([0.0]))
    fx, gx = f.eval_fg(np.array([1.0]))
    assert fx == pytest.approx(np.log(2.0)) and gx == pytest.approx([1.0])


def test_robust_derivative_lipschitz_probe():
    f = robust_loss(DenseOperator([[1.0]]), [0.0])
    rng = np.random.default_rng(5)
    pts = rng.uniform(-10, 10, size=(1000, 2))
    ratios = [abs(f.gradient(np.array([a]))[0] - f.gradient(np.array([b]))[0]) / abs(a - b) for a, b in pts]
    # frozen sampled maximum; the sharp bound is 2 = 2 ||A^T A||
    assert max(ratios) == pytest.approx(1.8947571685495652, rel=1e-9)
    assert max(ratios) <= 2.0


def test_lipschitz_estimates_carry_safety_factor():
    A = np.diag([3.0, 1.0])
    assert quadratic_loss(A, np.zeros(2)).lipschitz == pytest.approx(9.0 * LIPSCHITZ_SAFETY, rel=1e-4)
    assert logistic_loss(A, np.ones(2)).lipschitz == pytest.approx(2.25 * LIPSCHITZ_SAFETY, rel=1e-4)
    assert robust_loss(A, np.zeros(2)).lipschitz == pytest.approx(18.0 * LIPSCHITZ_SAFETY, rel=1e-4)
    assert quadratic_loss(A, np.zeros(2), lipschitz=9.0).lipschitz == 9.0


def test_hvp_or_fd():
    f = _instances()["quadratic"]
    v = np.arange(6.0)
    hv, analytic = hvp_or_fd(f, np.zeros(6), v)
    assert analytic and np.array_equal(hv, f.hvp(np.zeros(6), v))
    z, analytic = hvp_or_fd(f, np.ones(6), np.zeros(6))
    assert analytic and not z.any()


def test_hvp_fd_fallback_matches_analytic():
    f = _instances()["logistic"]
    bare = FunctionOracle(f._eval_fg, f.dim)
    assert not bare.has_hvp
    rng = np.random.default_rng(6)
    x, v = rng.standard_normal(6), rng.standard_normal(6)
    approx, analytic = hvp_or_fd(bare, x, v)
    exact = f.hvp(x, v)
    assert not analytic
    assert np.linalg.norm(approx - exact) <= 1e-6 * np.linalg.norm(exact)


def test_counters_and_matvecs():
    f = _instances()["quadratic"]
    f.reset_counters()
    f.eval_fg(np.ones(6))
    f.hvp(np.ones(6), np.ones(6))
    c = f.counters()
    assert (c["f_evals"], c["grad_evals"], c["hvps"], c["matvecs"]) == (1, 1, 1, 4)


@pytest.mark.parametrize("name", ["quadratic", "logistic", "robust"])
def test_line_evaluator_agrees_with_direct(name):
    f = _instances()[name]
    rng = np.random.default_rng(7)
    x, d = rng.standard_normal(6), rng.standard_normal(6)
    line = f.line(x, d)
    for tau in (0.0, 0.5, 1.0, 2.0):
        fv, gv = line.value_grad(tau)
        fd, gd = f.eval_fg(x + tau * d)
        assert fv == pytest.approx(fd, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(gv, gd, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(line.curvature(), f.hvp(x, d), rtol=1e-10, atol=1e-12)


def test_line_evaluator_reuses_images():
    f = _instances()["quadratic"]
    x, d = np.ones(6), np.arange(6.0)
    f.eval_fg(x)
    f.reset_counters()
    line = f.line(x, d)
    line.value_grad(1.0)
    line.value_grad(0.5)
    # one forward product for A d, one adjoint per gradient
    assert f.counters()["matvecs"] == 3


@pytest.mark.parametrize("name", ["quadratic", "logistic", "robust"])
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_smooth_oracle_invariants(name, seed):
    f = _instances()[name]
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(6), rng.standard_normal(6)
    u, v = rng.standard_normal(6), rng.standard_normal(6)
    fx, gx = f.eval_fg(x)
    fy, gy = f.eval_fg(y)
    L = f.lipschitz
    assert np.linalg.norm(gx - gy) <= L * np.linalg.norm(x - y) * (1 + 1e-12)
    assert fy <= fx + gx @ (y - x) + 0.5 * L * (y - x) @ (y - x) + 1e-10 * (1 + abs(fx))
    a, b = f.hvp(x, u) @ v, u @ f.hvp(x, v)
    assert abs(a - b) <= 1e-8 * (1 + abs(a))
    fd = fd_gradient(f.value, x)
    assert np.linalg.norm(fd - gx) <= 1e-5 * max(np.linalg.norm(gx), 1e-3)
