import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbenv.fbe import CompositeProblem
from fbenv.linops import DenseOperator
from fbenv.oracle import reference_solution
from fbenv.problems import gen_synthetic
from fbenv.prox import l1_norm, zero_function
from fbenv.smooth import FunctionOracle, quadratic_loss, robust_loss
from fbenv.solver import (COUNTER_KEYS, PRESETS, SolveParams, backtrack_nonincrease, check_termination,
                          estimate_gamma0, preset, solve, wolfe_search)


def half_square():
    return FunctionOracle(lambda x: (0.5 * float(x @ x), x.copy()), 1, hvp=lambda x, v: v.copy(),
                          lipschitz=1.0)


@pytest.fixture
def lasso():
    problem, meta = gen_synthetic("lasso", {"m": 30, "n": 80}, 0)
    return problem


def test_scalar_linear_map():
    # x_{k+1} = T(x_k - grad phi_gamma(x_k)) = 0.05 * (1 - 0.05) x_k with tau = 1
    p = CompositeProblem(half_square(), zero_function(1))
    x, trace = solve(p, SolveParams(variant="fixed", gamma0=0.95, direction="steepest", tol_abs=1e-12),
                     np.array([1.0]))
    assert trace.converged
    res = trace.column("residual")
    assert np.all(res[1:] <= res[:-1] / 20)
    assert np.all(trace.column("tau")[:-1] == 1.0)
    assert x[0] == pytest.approx(0.0475 ** trace.iterations, rel=1e-12)


def test_gamma_floor_on_lasso(lasso):
    A = lasso.smooth.A.to_dense()
    L = float(np.linalg.eigvalsh(A.T @ A)[-1])
    p = CompositeProblem(quadratic_loss(lasso.smooth.A, lasso.smooth.b, lipschitz=L), lasso.nonsmooth)
    sigma, beta = 0.5, 0.05
    gamma0 = 10 * sigma * (1 - beta) / L
    _, trace = solve(p, SolveParams(variant="adaptive", gamma0=gamma0, tol_abs=1e-9))
    assert trace.column("gamma").min() >= min(gamma0, sigma * (1 - beta) / L)
    assert trace.column("gamma_shrinks").sum() >= 1


def test_critical_start_stops_immediately(lasso):
    ref = reference_solution(lasso)
    x, trace = solve(lasso, preset("alg1-lbfgs", tol_abs=1e-6), ref.x)
    assert trace.converged and trace.iterations == 0
    assert not trace.column("qn_accepted").any()


def test_backtrack_examples():
    assert backtrack_nonincrease(lambda t: 1.0 - t, 1.0) == (1.0, 1)
    assert backtrack_nonincrease(lambda t: (t - 0.4) ** 2, 0.16) == (0.5, 2)
    assert backtrack_nonincrease(lambda t: 1.0 + t, 1.0, max_backtracks=5) == (0.0, 6)


def test_backtrack_treats_errors_as_failure():
    def fbe_at(t):
        if t > 0.3:
            raise FloatingPointError
        return -1.0
    assert backtrack_nonincrease(fbe_at, 0.0) == (0.25, 3)


def test_termination_examples():
    class Rec:
        residual = 0.0
    assert check_termination(Rec, 0.0, 0.0, 5.0)
    Rec.residual = 3.0
    assert check_termination(Rec, 0.0, 1.0, 3.0)
    assert not check_termination(Rec, 1.0, 0.0, 3.0)


def test_lasso_tolerance_reaches_objective_gap(lasso):
    phi_star = reference_solution(lasso).phi
    x, trace = solve(lasso, preset("alg2-lbfgs", lasso.lipschitz, tol_abs=1e-8))
    assert trace.converged
    assert lasso.objective(x) - phi_star <= 1e-6 * (1 + abs(phi_star))


def test_wolfe_examples():
    r = wolfe_search(lambda t: (0.5 * t * t - t, t - 1.0), 0.0, -1.0)
    assert r.ok and r.tau == 1.0
    r = wolfe_search(lambda t: (t * t - 2 * t, 2 * t - 2), 0.0, -2.0, c1=1e-4)
    assert r.ok and r.tau == 1.0
    with pytest.raises(ValueError):
        wolfe_search(lambda t: (t, 1.0), 0.0, 1.0)


def test_wolfe_rosenbrock_section():
    def rosen(z):
        return (1 - z[0]) ** 2 + 100 * (z[1] - z[0] ** 2) ** 2

    def grad(z):
        return np.array([-2 * (1 - z[0]) - 400 * z[0] * (z[1] - z[0] ** 2), 200 * (z[1] - z[0] ** 2)])

    x = np.array([-1.2, 1.0])
    d = -grad(x)
    slope0 = grad(x) @ d
    r = wolfe_search(lambda t: (rosen(x + t * d), grad(x + t * d) @ d), rosen(x), slope0)
    assert r.ok and r.tau > 0
    assert rosen(x + r.tau * d) <= rosen(x) + 1e-4 * r.tau * slope0
    assert grad(x + r.tau * d) @ d >= 0.9 * slope0


def test_counters_match_hand_count(lasso):
    lasso.reset_counters()
    _, trace = solve(lasso, preset("alg2-lbfgs", lasso.lipschitz, tol_abs=0.0, max_iters=3))
    assert trace.status == "max-iters"
    hand = {"f_evals": 2, "grad_evals": 2, "hvps": 3, "prox_calls": 2, "matvecs": 6, "svds": 0,
            "transforms": 0}
    for rec in trace.records[1:3]:
        assert rec.tau == 1.0 and rec.ls_trials == 1 and rec.gamma_shrinks == 0
        assert {k: getattr(rec, k) for k in COUNTER_KEYS} == hand
    # closing record: cache and envelope gradient at the last iterate
    last = trace.records[3]
    assert (last.f_evals, last.grad_evals, last.hvps, last.prox_calls, last.matvecs) == (0, 1, 1, 1, 2)
    for key in COUNTER_KEYS:
        assert trace.counters[key] == trace.column(key).sum() == lasso.counters()[key]


@pytest.mark.parametrize("name", PRESETS)
def test_presets_converge(name, lasso):
    phi_star = reference_solution(lasso).phi
    x, trace = solve(lasso, preset(name, lasso.lipschitz, tol_abs=1e-8, max_iters=20000))
    assert trace.converged, trace.status
    assert lasso.objective(x) - phi_star <= 1e-6 * (1 + abs(phi_star))


def test_fbs_equivalence_bitwise(lasso):
    params = SolveParams(variant="adaptive", direction="steepest", tau_zero=True, beta=0.0,
                         max_iters=60, tol_abs=0.0)
    x1, t1 = solve(lasso, params)
    x2, t2 = solve(lasso, params, variant="fbs")
    assert np.array_equal(x1, x2)
    assert np.array_equal(t1.column("residual"), t2.column("residual"))


def test_fixed_step_validation(lasso):
    with pytest.raises(ValueError, match="exceeds"):
        solve(lasso, SolveParams(variant="fixed", gamma0=1.0 / lasso.lipschitz, beta=0.05))
    with pytest.raises(ValueError):
        solve(lasso, SolveParams(variant="fixed"))
    with pytest.raises(ValueError, match="unknown variant"):
        solve(lasso, SolveParams(variant="newton"))
    with pytest.raises(ValueError, match="valid presets"):
        preset("newton-exact")


def test_gamma_underflow_status(lasso):
    params = SolveParams(variant="adaptive", gamma0=1e6 / lasso.lipschitz, max_gamma_shrinks=3)
    _, trace = solve(lasso, params)
    assert trace.status == "gamma-underflow"


def test_objective_target_stop(lasso):
    phi_star = reference_solution(lasso).phi
    x, trace = solve(lasso, preset("fast-fbs", lasso.lipschitz, objective_target=phi_star, tol_abs=0.0))
    assert trace.converged
    assert lasso.objective(x) - phi_star <= 1e-6 * (1 + abs(phi_star))


def test_estimate_gamma0_is_safe(lasso):
    A = lasso.smooth.A.to_dense()
    L = float(np.linalg.eigvalsh(A.T @ A)[-1])
    g0 = estimate_gamma0(lasso, np.zeros(lasso.dim), beta=0.05)
    assert g0 >= 0.95 / L * (1 - 1e-9)


def test_trace_serialization(tmp_path, lasso):
    _, trace = solve(lasso, preset("alg1-lbfgs", max_iters=5))
    trace.to_csv(tmp_path / "t.csv")
    trace.to_json(tmp_path / "t.json")
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert len(rows) == len(trace.records) + 1 and rows[0].startswith("k,gamma,tau")
    data = json.loads((tmp_path / "t.json").read_text())
    assert data["status"] == trace.status and len(data["records"]) == len(trace.records)


def test_store_iterates(lasso):
    _, trace = solve(lasso, preset("alg1-lbfgs", max_iters=4, store_iterates=True))
    assert len(trace.iterates) == len(trace.records)
    for x, rec in zip(trace.iterates, trace.records):
        assert lasso.objective(x) == pytest.approx(rec.objective, rel=1e-10)


def _descent_ok(problem, params):
    _, trace = solve(problem, params, store_iterates=True)
    phi = [problem.objective(x) for x in trace.iterates]
    for k, rec in enumerate(trace.records[:-1]):
        bound = phi[k] - 0.5 * params.beta * rec.gamma * rec.residual_w**2 - 0.5 * rec.gamma * rec.residual**2
        assert phi[k + 1] <= bound + 1e-9 * (1 + abs(phi[k]))
    return trace


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), variant=st.sampled_from(["adaptive", "fixed"]),
       direction=st.sampled_from(["steepest", "bfgs", "lbfgs"]))
def test_descent_inequality_property(seed, variant, direction):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((12, 20))
    b = rng.standard_normal(12)
    p = CompositeProblem(quadratic_loss(DenseOperator(A), b), l1_norm(0.3, 20))
    gamma0 = 0.95 * 0.95 / p.lipschitz if variant == "fixed" else None
    _descent_ok(p, SolveParams(variant=variant, direction=direction, gamma0=gamma0, tol_abs=1e-9,
                               max_iters=300))


def test_descent_inequality_nonconvex():
    rng = np.random.default_rng(9)
    A = rng.standard_normal((25, 15))
    b = A @ rng.standard_normal(15) + 5 * rng.standard_normal(25)
    p = CompositeProblem(robust_loss(DenseOperator(A), b), l1_norm(0.2, 15))
    trace = _descent_ok(p, preset("alg1-lbfgs", tol_abs=1e-8, max_iters=2000))
    assert trace.converged
