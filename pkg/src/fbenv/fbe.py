"""Forward-backward quantities and the forward-backward envelope.

For ``phi = f + g`` and ``gamma > 0``:

* ``T(x) = prox_{gamma g}(x - gamma grad f(x))``, the forward-backward step;
* ``R(x) = (x - T(x)) / gamma``, the fixed-point residual;
* ``phi_gamma(x) = f(x) - gamma <grad f(x), R(x)> + gamma/2 ||R(x)||^2 + g(T(x))``,
  the envelope, real valued and continuously differentiable with gradient
  ``(I - gamma Hess f(x)) R(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linops import DimensionError
from .prox import moreau_env
from .smooth import hvp_or_fd

__all__ = [
    "NonFiniteError",
    "CompositeProblem",
    "FbCache",
    "fb_cache",
    "fbe_gradient",
    "gamma_condition",
    "fbe_moreau_form",
    "ROUNDING_ULPS",
]

#: Margin of the gamma test, in units of machine epsilon times the envelope's scale.
ROUNDING_ULPS = 8.0
_EPS = np.finfo(float).eps


class NonFiniteError(FloatingPointError):
    """Raised when ``f`` or its gradient is not finite; carries the point."""

    def __init__(self, message, x):
        super().__init__(message)
        self.x = x


class CompositeProblem:
    """``minimize f(x) + g(x)`` with a smooth oracle ``f`` and a prox oracle ``g``."""

    def __init__(self, smooth, nonsmooth, name=None, meta=None):
        if smooth.dim != nonsmooth.dim:
            raise DimensionError("composite problem", smooth.dim, nonsmooth.dim)
        self.smooth = smooth
        self.nonsmooth = nonsmooth
        self.name = name
        self.meta = dict(meta or {})

    @property
    def dim(self):
        return self.smooth.dim

    @property
    def lipschitz(self):
        return self.smooth.lipschitz

    def objective(self, x):
        return self.smooth.value(x) + self.nonsmooth(x)

    def counters(self):
        out = dict(self.smooth.counters())
        out.update(self.nonsmooth.counters())
        return out

    def reset_counters(self):
        self.smooth.reset_counters()
        self.nonsmooth.reset_counters()

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<CompositeProblem{label} dim={self.dim} {type(self.smooth).__name__}+{type(self.nonsmooth).__name__}>"


@dataclass(frozen=True)
class FbCache:
    """Everything one forward-backward step computes at ``x`` for one ``gamma``."""

    x: np.ndarray
    gamma: float
    f_x: float
    grad_f_x: np.ndarray
    t_x: np.ndarray
    g_at_t: float
    r_x: np.ndarray
    r_norm: float
    fbe: float


def fb_cache(problem, gamma, x, f_x=None, grad_f_x=None):
    """Evaluate the forward-backward step at ``x``.

    Costs one prox call plus whatever of ``f(x)``, ``grad f(x)`` is not
    supplied by the caller.  ``phi(x)`` itself is never needed, so ``x`` may
    lie outside the domain of ``g``.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("point has non-finite entries", x)
    smooth = problem.smooth
    if f_x is None and grad_f_x is None:
        f_x, grad_f_x = smooth.eval_fg(x)
    elif grad_f_x is None:
        grad_f_x = smooth.gradient(x)
    elif f_x is None:
        f_x = smooth.value(x)
    if not np.isfinite(f_x) or not np.all(np.isfinite(grad_f_x)):
        raise NonFiniteError("f or its gradient is not finite", x)
    t_x, g_at_t = problem.nonsmooth.prox(gamma, x - gamma * grad_f_x)
    r_x = (x - t_x) / gamma
    r_norm = float(np.linalg.norm(r_x))
    fbe = f_x - gamma * float(grad_f_x @ r_x) + 0.5 * gamma * r_norm**2 + g_at_t
    return FbCache(x, float(gamma), float(f_x), grad_f_x, t_x, g_at_t, r_x, r_norm, fbe)


def fbe_gradient(problem, cache, hess_r=None):
    """Gradient of the envelope, ``R(x) - gamma * Hess f(x) R(x)``.

    One Hessian-vector product, or one extra gradient when the smooth oracle
    has no analytic product.  ``hess_r`` supplies ``Hess f(x) R(x)`` when the
    caller already has it.
    """
    if hess_r is None:
        hess_r, _ = hvp_or_fd(problem.smooth, cache.x, cache.r_x, grad_x=cache.grad_f_x)
    return cache.r_x - cache.gamma * hess_r


def gamma_condition(beta, cache_w, phi_at_tw):
    """True when ``gamma`` must shrink at ``w``.

    The test is ``phi(T(w)) + beta*gamma/2 ||R(w)||^2 > phi_gamma(w)``; the
    caller supplies ``phi(T(w)) = f(T(w)) + g(T(w))``.

    Differences below the rounding error of the envelope (a few ulps of
    ``|f(w)| + |g(T(w))| + |phi_gamma(w)|``) do not count: near a solution
    both sides agree to the last bit and a strict comparison would shrink
    ``gamma`` on noise.
    """
    lhs = phi_at_tw + 0.5 * beta * cache_w.gamma * cache_w.r_norm**2
    noise = ROUNDING_ULPS * _EPS * (abs(cache_w.f_x) + abs(cache_w.g_at_t) + abs(cache_w.fbe))
    return bool(lhs > cache_w.fbe + noise)


def fbe_moreau_form(problem, gamma, x):
    """Envelope via ``f(x) - gamma/2 ||grad f(x)||^2 + g^gamma(x - gamma grad f(x))``.

    Independent of :func:`fb_cache`'s formula; used to cross-check it.
    """
    f_x, grad = problem.smooth.eval_fg(x)
    return f_x - 0.5 * gamma * float(grad @ grad) + moreau_env(problem.nonsmooth, gamma, x - gamma * grad)
