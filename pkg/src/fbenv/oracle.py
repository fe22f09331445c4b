"""Independent checks: finite differences, 1-D grid minimization, reference solves.

Nothing here calls the code it is meant to validate: the grid routines only
evaluate function values, and :func:`fd_gradient` only evaluates the field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FdConfig",
    "fd_gradient",
    "prox_grid_oracle",
    "envelope_grid_oracle",
    "ReferenceSolution",
    "reference_solution",
]


@dataclass(frozen=True)
class FdConfig:
    """Central-difference settings; the step at coordinate i is ``step * (1 + |x_i|)``."""

    step: float = 1e-6
    stencil: str = "central"

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("finite-difference step must be positive")
        if self.stencil != "central":
            raise ValueError("only the central stencil is supported")


def fd_gradient(field, x, config=None):
    """Coordinatewise central differences of a scalar field."""
    config = config or FdConfig()
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        h = config.step * (1.0 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        fp = field(x + e)
        fm = field(x - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"field is not finite around coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def _grid(x, gamma, scale, step, grid):
    if grid is None:
        half = 10.0 * gamma * scale
        grid = np.arange(x - half, x + half + 0.5 * step, step)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    return grid


def _evaluate(fun, grid):
    try:
        vals = np.asarray(fun(grid), dtype=float)
        if vals.shape == grid.shape:
            return vals
    except (TypeError, ValueError):
        pass
    return np.array([fun(u) for u in grid], dtype=float)


def prox_grid_oracle(g_scalar, gamma, x, grid=None, step=1e-4, scale=1.0):
    """Grid minimizer of ``g(u) + (u - x)^2 / (2 gamma)`` for scalar ``x``.

    The default grid spans ``x +- 10 * gamma * scale`` with spacing ``step``.
    """
    grid = _grid(x, gamma, scale, step, grid)
    vals = _evaluate(g_scalar, grid) + (grid - x) ** 2 / (2.0 * gamma)
    return float(grid[np.argmin(vals)])


def envelope_grid_oracle(fun, mu, x, grid=None, step=1e-4, scale=1.0):
    """Grid value of ``min_u fun(u) + (u - x)^2 / (2 mu)`` for scalar ``x``."""
    grid = _grid(x, mu, scale, step, grid)
    vals = _evaluate(fun, grid) + (grid - x) ** 2 / (2.0 * mu)
    return float(np.min(vals))


@dataclass
class ReferenceSolution:
    x: np.ndarray
    phi: float
    residual: float
    converged: bool
    runs: dict


def reference_solution(problem, tol=1e-12, x0=None, max_iters=20000):
    """High-accuracy solution by two runs to residual ``tol * max(1, ||R(x0)||)``.

    The first run uses L-BFGS directions, the second plain steepest-descent
    directions warm-started from the first.  The point with the lower
    objective is returned; objectives within ``1e-14 (1 + |phi|)`` of each
    other count as tied and the smaller residual wins.  ``converged`` is
    False when neither run reached the tolerance within ``max_iters``.
    """
    from .solver import SolveParams, solve

    L = problem.lipschitz
    if L is not None:
        base = SolveParams(variant="fixed", gamma0=0.95 / L, beta=0.05)
    else:
        base = SolveParams(variant="adaptive", beta=0.05)
    base.max_iters = max_iters
    x_lb, tr_lb = solve(problem, base, x0, direction="lbfgs", tol_abs=0.0, max_iters=0)
    scale = max(1.0, tr_lb.records[0].residual)
    base.tol_abs = tol * scale
    x_lb, tr_lb = solve(problem, base, x0, direction="lbfgs")
    x_sd, tr_sd = solve(problem, base, x_lb, direction="steepest", max_iters=max(200, max_iters // 20))
    runs = [(problem.objective(x_lb), tr_lb.records[-1].residual, x_lb),
            (problem.objective(x_sd), tr_sd.records[-1].residual, x_sd)]
    phi_min = min(r[0] for r in runs)
    near = [r for r in runs if r[0] - phi_min <= 1e-14 * (1.0 + abs(phi_min))]
    phi, res, x = min(near, key=lambda r: r[1])
    ok = tr_lb.converged or tr_sd.converged
    return ReferenceSolution(x, float(phi), float(res), bool(ok),
                             {"lbfgs": tr_lb, "steepest": tr_sd})
