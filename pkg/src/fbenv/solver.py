"""Forward-backward line-search methods and forward-backward splitting baselines.

Variants
--------
``adaptive``
    Line search on the envelope followed by a forward-backward step from the
    trial point; ``gamma`` shrinks by ``sigma`` whenever the sufficient
    decrease test at the trial point fails.
``fixed``
    Same iteration with ``gamma`` fixed in ``(0, (1 - beta) / L_f]``.
``classical-ls``
    Wolfe line search on the envelope with ``x_{k+1} = w_k`` (no final
    forward-backward step); ``gamma`` adapted as in ``adaptive``.
``fbs``
    Plain forward-backward splitting with backtracking on ``gamma``.
``fast-fbs``
    Nesterov-accelerated forward-backward splitting with the same backtracking.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .directions import descent_check, make_direction
from .fbe import NonFiniteError, fb_cache, fbe_gradient, gamma_condition

__all__ = [
    "SolveParams",
    "IterRecord",
    "SolveTrace",
    "WolfeResult",
    "solve",
    "backtrack_nonincrease",
    "wolfe_search",
    "check_termination",
    "estimate_gamma0",
    "preset",
    "PRESETS",
    "VARIANTS",
]

logger = logging.getLogger(__name__)

VARIANTS = ("adaptive", "fixed", "classical-ls", "fbs", "fast-fbs")
COUNTER_KEYS = ("f_evals", "grad_evals", "hvps", "prox_calls", "matvecs", "svds", "transforms")


@dataclass
class SolveParams:
    """Settings for :func:`solve`.

    ``objective_target`` switches on the benchmark stopping rule
    ``phi(x_k) - target <= objective_tol * (1 + |target|)`` in addition to the
    residual test ``||R(x_k)|| <= tol_abs + tol_rel * ||R(x_0)||``.
    """

    variant: str = "adaptive"
    direction: str = "lbfgs"
    memory: int = 5
    gamma0: float | None = None
    beta: float = 0.05
    sigma: float = 0.5
    max_iters: int = 1000
    tol_abs: float = 1e-8
    tol_rel: float = 0.0
    ls_max_backtracks: int = 50
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    wolfe_max_iters: int = 40
    tau_zero: bool = False
    objective_target: float | None = None
    objective_tol: float = 1e-6
    divergence_floor: float = -1e30
    max_gamma_shrinks: int = 200
    store_iterates: bool = False
    seed: int = 0

    def validate(self, lipschitz=None):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if not 0.0 < self.sigma < 1.0:
            raise ValueError(f"sigma must lie in (0, 1), got {self.sigma}")
        if self.gamma0 is not None and not self.gamma0 > 0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")
        if self.max_iters < 0 or self.ls_max_backtracks < 0:
            raise ValueError("iteration budgets must be nonnegative")
        if self.variant == "fixed":
            if self.gamma0 is None or lipschitz is None:
                raise ValueError("variant 'fixed' needs gamma0 and a known Lipschitz constant")
            if self.gamma0 > (1.0 - self.beta) / lipschitz * (1.0 + 1e-12):
                raise ValueError(
                    f"fixed gamma0={self.gamma0} exceeds (1 - beta)/L_f = {(1.0 - self.beta) / lipschitz}")


@dataclass
class IterRecord:
    """One row of a solve trace.

    ``residual`` is ``||R_gamma(x_k)||`` at the final ``gamma`` of iteration
    ``k`` (for ``fast-fbs``: at the extrapolated point).  Counter fields hold
    the work done since the previous record.
    """

    k: int
    gamma: float
    tau: float
    residual: float
    objective: float
    fbe_x: float
    fbe_w: float
    residual_w: float
    descent_replaced: bool
    gamma_shrinks: int
    qn_accepted: bool
    ls_trials: int
    f_evals: int = 0
    grad_evals: int = 0
    hvps: int = 0
    prox_calls: int = 0
    matvecs: int = 0
    svds: int = 0
    transforms: int = 0


@dataclass
class SolveTrace:
    records: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    status: str = "running"
    params: dict = field(default_factory=dict)
    gamma0: float = float("nan")
    wall_time: float = 0.0
    iterates: list = field(default_factory=list, repr=False)

    @property
    def iterations(self):
        return self.records[-1].k if self.records else 0

    @property
    def converged(self):
        return self.status == "converged"

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def cumulative(self, name):
        return np.cumsum(self.column(name))

    def to_csv(self, path):
        names = [f.name for f in fields(IterRecord)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.records:
                w.writerow([_csv_value(getattr(r, n)) for n in names])

    def to_dict(self):
        return {
            "status": self.status,
            "iterations": self.iterations,
            "gamma0": self.gamma0,
            "wall_time": self.wall_time,
            "counters": dict(self.counters),
            "params": dict(self.params),
            "records": [asdict(r) for r in self.records],
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=1)


def _csv_value(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def check_termination(record, tol_abs, tol_rel, r0_norm):
    """Residual stopping rule ``||R(x_k)|| <= tol_abs + tol_rel * ||R(x_0)||``."""
    return record.residual <= tol_abs + tol_rel * r0_norm


def backtrack_nonincrease(fbe_at, fbe_x, max_backtracks=50):
    """Return ``(tau, trials)`` with the first ``tau`` in 1, 1/2, 1/4, ... such that
    ``fbe_at(tau) <= fbe_x``.

    Only nonincrease is asked for.  After ``max_backtracks`` halvings ``tau = 0``
    is returned, which leaves the iterate where it was.
    """
    tau = 1.0
    for trial in range(max_backtracks + 1):
        try:
            val = fbe_at(tau)
        except (NonFiniteError, FloatingPointError):
            val = math.inf
        if val <= fbe_x:
            return tau, trial + 1
        tau *= 0.5
    return 0.0, max_backtracks + 1


@dataclass
class WolfeResult:
    tau: float
    ok: bool
    evaluations: int


def wolfe_search(phi_slope, phi0, slope0, c1=1e-4, c2=0.9, max_iters=40, tau0=1.0):
    """Bracketing line search for the weak Wolfe conditions.

    ``phi_slope(tau)`` returns the value and directional derivative along the
    search line.  The bracket doubles until the sufficient decrease test
    fails, then bisects.  On failure the last step that passed sufficient
    decrease is returned with ``ok=False`` (possibly ``0``).
    """
    if not slope0 < 0:
        raise ValueError(f"initial slope must be negative, got {slope0}")
    lo, hi = 0.0, math.inf
    tau = tau0
    for it in range(1, max_iters + 1):
        try:
            val, slope = phi_slope(tau)
        except (NonFiniteError, FloatingPointError):
            val, slope = math.inf, math.nan
        if not val <= phi0 + c1 * tau * slope0:
            hi = tau
        elif slope < c2 * slope0:
            lo = tau
        else:
            return WolfeResult(tau, True, it)
        tau = 2.0 * lo if hi == math.inf else 0.5 * (lo + hi)
    return WolfeResult(lo, False, max_iters)


def estimate_gamma0(problem, x0, beta=0.0, seed=0):
    """``(1 - beta) / L`` with ``L`` a secant estimate of the gradient's Lipschitz constant."""
    smooth = problem.smooth
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(problem.dim)
    delta = 1e-6 * (1.0 + np.linalg.norm(x0)) * u / np.linalg.norm(u)
    g0 = smooth.gradient(x0)
    g1 = smooth.gradient(x0 + delta)
    L = np.linalg.norm(g1 - g0) / np.linalg.norm(delta)
    if not L > 0 or not np.isfinite(L):
        return 1.0
    return (1.0 - beta) / L


def _default_gamma0(problem, params, x0):
    L = problem.lipschitz
    beta = 0.0 if params.variant in ("fbs", "fast-fbs") else params.beta
    if L is not None and L > 0:
        return (1.0 - beta) / L
    return estimate_gamma0(problem, x0, beta, params.seed)


class _Meter:
    """Turns cumulative problem counters into per-record increments."""

    def __init__(self, problem):
        self.problem = problem
        self.start = self._read()
        self.last = dict(self.start)

    def _read(self):
        c = self.problem.counters()
        return {k: c.get(k, 0) for k in COUNTER_KEYS}

    def delta(self):
        now = self._read()
        d = {k: now[k] - self.last[k] for k in COUNTER_KEYS}
        self.last = now
        return d

    def total(self):
        now = self._read()
        return {k: now[k] - self.start[k] for k in COUNTER_KEYS}


def solve(problem, params=None, x0=None, **overrides):
    """Minimize ``f + g`` from ``x0``; returns ``(x, trace)``.

    Keyword overrides are applied to a copy of ``params``.
    """
    params = params or SolveParams()
    if overrides:
        params = replace(params, **overrides)
    params.validate(problem.lipschitz)
    x0 = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=float)
    if x0.shape != (problem.dim,) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be a finite vector of the problem dimension")
    problem.nonsmooth.reset()
    meter = _Meter(problem)
    trace = SolveTrace(params=asdict(params))
    started = time.perf_counter()
    gamma0 = params.gamma0 if params.gamma0 is not None else _default_gamma0(problem, params, x0)
    trace.gamma0 = float(gamma0)
    if params.variant == "fast-fbs":
        x = _run_fast_fbs(problem, params, x0, gamma0, trace, meter)
    elif params.variant == "classical-ls":
        x = _run_classical(problem, params, x0, gamma0, trace, meter)
    else:
        x = _run_fbls(problem, params, x0, gamma0, trace, meter)
    trace.wall_time = time.perf_counter() - started
    trace.counters = meter.total()
    return x, trace


def _stop_status(params, record, r0_norm, phi_x, k):
    """Status string if iteration ``k`` should stop before stepping, else ``None``."""
    if check_termination(record, params.tol_abs, params.tol_rel, r0_norm):
        return "converged"
    target = params.objective_target
    if target is not None and phi_x - target <= params.objective_tol * (1.0 + abs(target)):
        return "converged"
    if phi_x < params.divergence_floor or math.isnan(phi_x):
        return "diverging-objective"
    if k >= params.max_iters:
        return "max-iters"
    return None


def _record(trace, meter, params, x, **kw):
    rec = IterRecord(**kw, **meter.delta())
    trace.records.append(rec)
    if params.store_iterates:
        trace.iterates.append(np.array(x, copy=True))
    return rec


def _underflow(trace, meter, params, x, k, gamma, residual, phi_x, fbe_x, shrinks):
    _record(trace, meter, params, x, k=k, gamma=gamma, tau=math.nan, residual=residual,
            objective=phi_x, fbe_x=fbe_x, fbe_w=math.nan, residual_w=math.nan,
            descent_replaced=False, gamma_shrinks=shrinks, qn_accepted=False, ls_trials=0)
    trace.status = "gamma-underflow"


def _run_fbls(problem, params, x0, gamma, trace, meter):
    """Adaptive and fixed forward-backward line search, and plain FBS."""
    smooth, g = problem.smooth, problem.nonsmooth
    variant = params.variant
    is_fbs = variant == "fbs"
    beta = 0.0 if is_fbs else params.beta
    adapt = variant in ("adaptive", "fbs")
    qn = make_direction(params.direction, params.memory)
    uses_pairs = qn.mode != "steepest" and not is_fbs

    x = x0.copy()
    cx = fb_cache(problem, gamma, x)
    phi_x = cx.f_x + g(x)
    gx = None if is_fbs else fbe_gradient(problem, cx)
    r0_norm = cx.r_norm
    k = 0
    shrinks = 0
    total_shrinks = 0
    while True:
        probe = IterRecord(k, gamma, 0.0, cx.r_norm, phi_x, cx.fbe, math.nan, math.nan,
                           False, shrinks, False, 0)
        status = _stop_status(params, probe, r0_norm, phi_x, k)
        if status is not None:
            _record(trace, meter, params, x, k=k, gamma=gamma, tau=math.nan, residual=cx.r_norm,
                    objective=phi_x, fbe_x=cx.fbe, fbe_w=math.nan, residual_w=math.nan,
                    descent_replaced=False, gamma_shrinks=shrinks, qn_accepted=False, ls_trials=0)
            trace.status = status
            return x

        replaced = False
        if is_fbs or params.tau_zero:
            d = None
        else:
            d = qn.direction(gx)
            if not descent_check(d, gx):
                logger.debug("iteration %d: direction is not a descent direction, using -grad", k)
                d = -gx
                replaced = True

        if d is None:
            tau, trials, cw = 0.0, 0, cx
        else:
            trial_cache = {}
            line = smooth.line(x, d, cx.f_x, cx.grad_f_x)

            def fbe_at(t):
                w = x + t * d
                f_w, grad_w = line.value_grad(t, point=w)
                c = fb_cache(problem, gamma, w, f_x=f_w, grad_f_x=grad_w)
                trial_cache[t] = c
                return c.fbe

            tau, trials = backtrack_nonincrease(fbe_at, cx.fbe, params.ls_max_backtracks)
            cw = trial_cache[tau] if tau > 0 else cx

        # T(w) = w - gamma R(w): evaluate f there along the residual direction
        step = smooth.line(cw.x, -cw.r_x, cw.f_x, cw.grad_f_x)
        try:
            f_tw = step.value(gamma, point=cw.t_x)
        except FloatingPointError:
            f_tw = math.inf
        phi_tw = f_tw + cw.g_at_t
        if adapt and gamma_condition(beta, cw, phi_tw):
            if total_shrinks >= params.max_gamma_shrinks:
                _underflow(trace, meter, params, x, k, gamma, cx.r_norm, phi_x, cx.fbe, shrinks)
                return x
            gamma *= params.sigma
            shrinks += 1
            total_shrinks += 1
            qn.reset()
            cx = fb_cache(problem, gamma, x, f_x=cx.f_x, grad_f_x=cx.grad_f_x)
            if not is_fbs:
                gx = fbe_gradient(problem, cx)
            continue

        accepted = False
        if uses_pairs and tau > 0:
            gw = fbe_gradient(problem, cw, hess_r=-step.curvature())
            accepted = qn.observe(cw.x - x, gw - gx)

        _record(trace, meter, params, x, k=k, gamma=gamma, tau=tau, residual=cx.r_norm,
                objective=phi_x, fbe_x=cx.fbe, fbe_w=cw.fbe, residual_w=cw.r_norm,
                descent_replaced=replaced, gamma_shrinks=shrinks, qn_accepted=accepted,
                ls_trials=trials)

        x_new = cw.t_x
        try:
            cx = fb_cache(problem, gamma, x_new, f_x=f_tw, grad_f_x=step.gradient(gamma, point=x_new))
        except NonFiniteError:
            trace.status = "diverging-objective"
            return x
        x = x_new
        phi_x = phi_tw
        if not is_fbs:
            gx = fbe_gradient(problem, cx)
        k += 1
        shrinks = 0


def _run_classical(problem, params, x0, gamma, trace, meter):
    """Quasi-Newton line search on the envelope, ``x_{k+1} = w_k``."""
    smooth, g = problem.smooth, problem.nonsmooth
    qn = make_direction(params.direction, params.memory)

    x = x0.copy()
    cx = fb_cache(problem, gamma, x)
    gx = fbe_gradient(problem, cx)
    phi_x = cx.f_x + g(x)
    r0_norm = cx.r_norm
    k = 0
    shrinks = 0
    total_shrinks = 0
    while True:
        probe = IterRecord(k, gamma, 0.0, cx.r_norm, phi_x, cx.fbe, math.nan, math.nan,
                           False, shrinks, False, 0)
        status = _stop_status(params, probe, r0_norm, phi_x, k)
        if status is not None:
            _record(trace, meter, params, x, k=k, gamma=gamma, tau=math.nan, residual=cx.r_norm,
                    objective=phi_x, fbe_x=cx.fbe, fbe_w=math.nan, residual_w=math.nan,
                    descent_replaced=False, gamma_shrinks=shrinks, qn_accepted=False, ls_trials=0)
            trace.status = status
            return x

        d = qn.direction(gx)
        replaced = False
        slope0 = float(d @ gx)
        if not slope0 < 0:
            d = -gx
            slope0 = -float(gx @ gx)
            replaced = True

        evals = {}
        line = smooth.line(x, d, cx.f_x, cx.grad_f_x)

        def phi_slope(t):
            w = x + t * d
            f_w, grad_w = line.value_grad(t, point=w)
            c = fb_cache(problem, gamma, w, f_x=f_w, grad_f_x=grad_w)
            gr = fbe_gradient(problem, c)
            evals[t] = (c, gr)
            return c.fbe, float(gr @ d)

        ws = wolfe_search(phi_slope, cx.fbe, slope0, params.wolfe_c1, params.wolfe_c2,
                          params.wolfe_max_iters)
        if ws.tau > 0:
            cw, gw = evals[ws.tau]
            fallback = False
        else:
            # no progress along d: take a forward-backward step instead
            fallback = True
            qn.reset()
            cw = fb_cache(problem, gamma, cx.t_x)
            gw = fbe_gradient(problem, cw)

        f_tw = smooth.line(cw.x, -cw.r_x, cw.f_x, cw.grad_f_x).value(gamma, point=cw.t_x)
        phi_tw = f_tw + cw.g_at_t
        if gamma_condition(params.beta, cw, phi_tw):
            if total_shrinks >= params.max_gamma_shrinks:
                _underflow(trace, meter, params, x, k, gamma, cx.r_norm, phi_x, cx.fbe, shrinks)
                return x
            gamma *= params.sigma
            shrinks += 1
            total_shrinks += 1
            qn.reset()
            cx = fb_cache(problem, gamma, x, f_x=cx.f_x, grad_f_x=cx.grad_f_x)
            gx = fbe_gradient(problem, cx)
            continue

        accepted = False if fallback else qn.observe(cw.x - x, gw - gx)
        _record(trace, meter, params, x, k=k, gamma=gamma, tau=ws.tau, residual=cx.r_norm,
                objective=phi_x, fbe_x=cx.fbe, fbe_w=cw.fbe, residual_w=cw.r_norm,
                descent_replaced=replaced or fallback, gamma_shrinks=shrinks,
                qn_accepted=accepted, ls_trials=ws.evaluations)
        x = cw.x
        cx, gx = cw, gw
        phi_x = cw.f_x + g(x)
        k += 1
        shrinks = 0


def _run_fast_fbs(problem, params, x0, gamma, trace, meter):
    """Accelerated forward-backward splitting with backtracking on ``gamma``."""
    smooth, g = problem.smooth, problem.nonsmooth
    x = x0.copy()
    y = x0.copy()
    t = 1.0
    cy = fb_cache(problem, gamma, y)
    phi_x = cy.f_x + g(x)
    r0_norm = cy.r_norm
    k = 0
    shrinks = 0
    total_shrinks = 0
    while True:
        probe = IterRecord(k, gamma, 0.0, cy.r_norm, phi_x, cy.fbe, math.nan, math.nan,
                           False, shrinks, False, 0)
        status = _stop_status(params, probe, r0_norm, phi_x, k)
        if status is not None:
            _record(trace, meter, params, x, k=k, gamma=gamma, tau=math.nan, residual=cy.r_norm,
                    objective=phi_x, fbe_x=cy.fbe, fbe_w=math.nan, residual_w=math.nan,
                    descent_replaced=False, gamma_shrinks=shrinks, qn_accepted=False, ls_trials=0)
            trace.status = status
            return x
        x_new = cy.t_x
        f_new = smooth.line(y, -cy.r_x, cy.f_x, cy.grad_f_x).value(gamma, point=x_new)
        phi_new = f_new + cy.g_at_t
        if phi_new > cy.fbe:
            if total_shrinks >= params.max_gamma_shrinks:
                _underflow(trace, meter, params, x, k, gamma, cy.r_norm, phi_x, cy.fbe, shrinks)
                return x
            gamma *= params.sigma
            shrinks += 1
            total_shrinks += 1
            cy = fb_cache(problem, gamma, y, f_x=cy.f_x, grad_f_x=cy.grad_f_x)
            continue
        _record(trace, meter, params, x, k=k, gamma=gamma, tau=math.nan, residual=cy.r_norm,
                objective=phi_x, fbe_x=cy.fbe, fbe_w=math.nan, residual_w=math.nan,
                descent_replaced=False, gamma_shrinks=shrinks, qn_accepted=False, ls_trials=0)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        c = (t - 1.0) / t_new
        y = x_new + c * (x_new - x)
        smooth.remember_combination(y, [(1.0 + c, x_new), (-c, x)])
        x, t, phi_x = x_new, t_new, phi_new
        try:
            cy = fb_cache(problem, gamma, y)
        except NonFiniteError:
            trace.status = "diverging-objective"
            return x
        k += 1
        shrinks = 0


PRESETS = ("fbs", "fast-fbs", "lbfgs-classical", "alg1-lbfgs", "alg2-lbfgs", "alg2-bfgs")


def preset(name, lipschitz=None, **overrides):
    """Named solver settings used by the benchmark CLI.

    ``beta = 0.05`` throughout; the fixed-``gamma`` presets use
    ``gamma = 0.95 / L_f`` and the limited-memory ones keep 5 pairs.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown solver preset {name!r}; valid presets: {', '.join(PRESETS)}")
    base = dict(beta=0.05, sigma=0.5, memory=5)
    if name == "fbs":
        base.update(variant="fbs", direction="steepest", beta=0.0)
    elif name == "fast-fbs":
        base.update(variant="fast-fbs", direction="steepest", beta=0.0)
    elif name == "lbfgs-classical":
        base.update(variant="classical-ls", direction="lbfgs")
    elif name == "alg1-lbfgs":
        base.update(variant="adaptive", direction="lbfgs")
    else:
        if lipschitz is None:
            raise ValueError(f"preset {name!r} needs a known Lipschitz constant")
        base.update(variant="fixed", direction="bfgs" if name == "alg2-bfgs" else "lbfgs",
                    gamma0=0.95 / lipschitz)
    base.update(overrides)
    return SolveParams(**base)
