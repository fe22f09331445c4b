"""Smooth loss oracles: value, gradient, Hessian-vector products, ``L_f``.

The three data-fitting losses all have the form ``f(x) = h(Ax)`` with ``h``
separable, so they share :class:`LinearModelLoss`.  It keeps a small memo of
recent images ``Ax``; a gradient requested right after a value at the same
point then costs a single adjoint product.  Along a line ``x + tau d`` the
image is ``Ax + tau Ad``, so :meth:`SmoothOracle.line` evaluates any number
of trial points for one forward product (and, for the quadratic loss, one
adjoint product in total).
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np
from scipy.special import expit

from .linops import DimensionError, aslinearoperator, norm_estimate

__all__ = [
    "SmoothOracle",
    "FunctionOracle",
    "LinearModelLoss",
    "QuadraticLoss",
    "LogisticLoss",
    "RobustLoss",
    "quadratic_loss",
    "logistic_loss",
    "robust_loss",
    "LineEvaluator",
    "hvp_or_fd",
    "LIPSCHITZ_SAFETY",
]

#: Power iteration approaches ``||A^T A||`` from below; estimates are inflated by this.
LIPSCHITZ_SAFETY = 1.01


class SmoothOracle:
    """Interface for the smooth term ``f``.

    Subclasses implement ``_eval_fg`` and optionally ``_value`` and ``_hvp``.
    ``lipschitz`` is an upper bound on the Lipschitz constant of the gradient,
    or ``None`` when unknown.
    """

    def __init__(self, dim, lipschitz=None):
        self.dim = int(dim)
        self.lipschitz = None if lipschitz is None else float(lipschitz)
        self.f_evals = 0
        self.grad_evals = 0
        self.hvps = 0

    @property
    def has_hvp(self):
        return type(self)._hvp is not SmoothOracle._hvp

    @property
    def operators(self):
        return ()

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionError(type(self).__name__, self.dim, x.shape)
        return x

    def value(self, x):
        x = self._check(x)
        self.f_evals += 1
        return float(self._value(x))

    def gradient(self, x):
        x = self._check(x)
        self.grad_evals += 1
        return self._gradient(x)

    def eval_fg(self, x):
        """Fused value and gradient; the primitive the solvers use."""
        x = self._check(x)
        self.f_evals += 1
        self.grad_evals += 1
        fx, gx = self._eval_fg(x)
        return float(fx), gx

    def hvp(self, x, v):
        x = self._check(x)
        v = self._check(v)
        self.hvps += 1
        return self._hvp(x, v)

    def __call__(self, x):
        return self.value(x)

    def line(self, x, d, f_x=None, grad_x=None):
        """Evaluator of ``f``, ``grad f`` and the curvature along ``x + tau d``."""
        return LineEvaluator(self, x, d, f_x, grad_x)

    def remember_combination(self, point, terms):
        """Hint that ``point = sum(c * z for c, z in terms)``.

        Oracles that can reuse work for such points return True.
        """
        return False

    def _value(self, x):
        return self._eval_fg(x)[0]

    def _gradient(self, x):
        return self._eval_fg(x)[1]

    def _eval_fg(self, x):
        raise NotImplementedError

    def _hvp(self, x, v):
        raise NotImplementedError(f"{type(self).__name__} has no Hessian-vector product")

    def counters(self):
        return {
            "f_evals": self.f_evals,
            "grad_evals": self.grad_evals,
            "hvps": self.hvps,
            "matvecs": sum(op.matvecs for op in self.operators),
        }

    def reset_counters(self):
        self.f_evals = self.grad_evals = self.hvps = 0
        for op in self.operators:
            op.reset_counters()


class FunctionOracle(SmoothOracle):
    """Smooth oracle from plain callables.

    ``fun_fg(x)`` returns ``(f(x), grad f(x))``; ``hvp(x, v)`` is optional.
    """

    def __init__(self, fun_fg, dim, hvp=None, lipschitz=None):
        super().__init__(dim, lipschitz)
        self._fun_fg = fun_fg
        self._hvp_fun = hvp

    @property
    def has_hvp(self):
        return self._hvp_fun is not None

    def _eval_fg(self, x):
        fx, gx = self._fun_fg(x)
        return fx, np.asarray(gx, dtype=float)

    def _hvp(self, x, v):
        if self._hvp_fun is None:
            raise NotImplementedError("FunctionOracle built without hvp")
        return np.asarray(self._hvp_fun(x, v), dtype=float)


class LinearModelLoss(SmoothOracle):
    """``f(x) = sum_i h_i((Ax)_i)`` for a separable scalar loss ``h``.

    Subclasses provide ``_h(z)``, ``_dh(z)`` and ``_d2h(z)`` acting on the
    vector ``z = Ax``.
    """

    memo_size = 8
    #: images built from other images are recomputed after this many links
    max_chain = 32
    #: gradient is affine along lines (true for quadratic h)
    affine_gradient = False

    def __init__(self, A, lipschitz=None):
        self.A = aslinearoperator(A)
        super().__init__(self.A.input_dim, lipschitz)
        self._memo = OrderedDict()

    @property
    def operators(self):
        return (self.A,)

    def _lookup(self, x):
        """``(image, depth)`` for ``x`` or ``None``."""
        hit = self._memo.get(x.tobytes())
        if hit is not None:
            self._memo.move_to_end(x.tobytes())
        return hit

    def _store(self, x, z, depth):
        self._memo[x.tobytes()] = (z, depth)
        self._memo.move_to_end(x.tobytes())
        if len(self._memo) > self.memo_size:
            self._memo.popitem(last=False)

    def _forward(self, x):
        hit = self._lookup(x)
        if hit is not None:
            return hit[0]
        z = self.A.apply(x)
        self._store(x, z, 0)
        return z

    def line(self, x, d, f_x=None, grad_x=None):
        return _LinearModelLine(self, x, d, f_x, grad_x)

    def remember_combination(self, point, terms):
        parts = []
        for c, z in terms:
            hit = self._lookup(np.asarray(z, dtype=float))
            if hit is None:
                return False
            parts.append((c, hit))
        depth = 1 + max(h[1] for _, h in parts)
        if depth > self.max_chain:
            return False
        image = sum(c * h[0] for c, h in parts)
        self._store(np.asarray(point, dtype=float), image, depth)
        return True

    def _value(self, x):
        return self._h(self._forward(x))

    def _gradient(self, x):
        return self.A.apply_adjoint(self._dh(self._forward(x)))

    def _eval_fg(self, x):
        z = self._forward(x)
        return self._h(z), self.A.apply_adjoint(self._dh(z))

    def _hvp(self, x, v):
        return self.A.apply_adjoint(self._d2h(self._forward(x)) * self.A.apply(v))

    def _h(self, z):
        raise NotImplementedError

    def _dh(self, z):
        raise NotImplementedError

    def _d2h(self, z):
        raise NotImplementedError


def _estimated_lipschitz(A, scale):
    return LIPSCHITZ_SAFETY * scale * norm_estimate(A).value


class QuadraticLoss(LinearModelLoss):
    """``f(x) = 1/2 ||Ax - b||^2``."""

    affine_gradient = True

    def __init__(self, A, b, lipschitz=None):
        A = aslinearoperator(A)
        b = np.asarray(b, dtype=float).ravel()
        if b.shape != (A.output_dim,):
            raise DimensionError("quadratic_loss b", A.output_dim, b.shape[0])
        if lipschitz is None:
            lipschitz = _estimated_lipschitz(A, 1.0)
        super().__init__(A, lipschitz)
        self.b = b

    def _h(self, z):
        r = z - self.b
        return 0.5 * float(r @ r)

    def _dh(self, z):
        return z - self.b

    def _d2h(self, z):
        return np.ones_like(z)

    def _hvp(self, x, v):
        # Hessian is A^T A, independent of x
        return self.A.apply_adjoint(self.A.apply(v))


class LogisticLoss(LinearModelLoss):
    """``f(x) = sum_i log(1 + exp(-b_i <a_i, x>))`` with labels ``b_i`` in {-1, +1}."""

    def __init__(self, A, labels, lipschitz=None):
        A = aslinearoperator(A)
        labels = np.asarray(labels, dtype=float).ravel()
        if labels.shape != (A.output_dim,):
            raise DimensionError("logistic_loss labels", A.output_dim, labels.shape[0])
        bad = ~np.isin(labels, (-1.0, 1.0))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"label {labels[i]!r} at row {i} is not -1 or +1")
        if lipschitz is None:
            lipschitz = _estimated_lipschitz(A, 0.25)
        super().__init__(A, lipschitz)
        self.labels = labels

    def _h(self, z):
        return float(np.logaddexp(0.0, -self.labels * z).sum())

    def _dh(self, z):
        return -self.labels * expit(-self.labels * z)

    def _d2h(self, z):
        s = expit(self.labels * z)
        return s * (1.0 - s)


class RobustLoss(LinearModelLoss):
    """``f(x) = sum_i log(1 + (Ax - b)_i^2)``, a nonconvex Cauchy-type loss."""

    def __init__(self, A, b, lipschitz=None):
        A = aslinearoperator(A)
        b = np.asarray(b, dtype=float).ravel()
        if b.shape != (A.output_dim,):
            raise DimensionError("robust_loss b", A.output_dim, b.shape[0])
        if lipschitz is None:
            lipschitz = _estimated_lipschitz(A, 2.0)
        super().__init__(A, lipschitz)
        self.b = b

    def _h(self, z):
        return float(np.log1p((z - self.b) ** 2).sum())

    def _dh(self, z):
        t = z - self.b
        return 2.0 * t / (1.0 + t * t)

    def _d2h(self, z):
        t2 = (z - self.b) ** 2
        return 2.0 * (1.0 - t2) / (1.0 + t2) ** 2


class LineEvaluator:
    """Evaluates ``f`` and ``grad f`` at ``x + tau d``.

    ``point`` may be passed to name the trial point explicitly when the
    caller formed it differently (for example as a prox output).  This
    generic version simply calls the oracle at that point.
    """

    def __init__(self, oracle, x, d, f_x=None, grad_x=None):
        self.oracle = oracle
        self.x = np.asarray(x, dtype=float)
        self.d = np.asarray(d, dtype=float)
        self.f_x = f_x
        self.grad_x = grad_x
        self._curv = None

    def _point(self, tau, point):
        return self.x + tau * self.d if point is None else np.asarray(point, dtype=float)

    def value(self, tau, point=None):
        return self.oracle.value(self._point(tau, point))

    def value_grad(self, tau, point=None):
        return self.oracle.eval_fg(self._point(tau, point))

    def gradient(self, tau, point=None):
        return self.oracle.gradient(self._point(tau, point))

    def curvature(self):
        """``Hess f(x) d``, computed once."""
        if self._curv is None:
            self._curv, _ = hvp_or_fd(self.oracle, self.x, self.d, self.grad_x)
        return self._curv


class _LinearModelLine(LineEvaluator):
    """Line evaluation through images: ``A(x + tau d) = Ax + tau Ad``."""

    def __init__(self, oracle, x, d, f_x=None, grad_x=None):
        super().__init__(oracle, oracle._check(x), oracle._check(d), f_x, grad_x)
        hit = oracle._lookup(self.x)
        if hit is None or hit[1] >= oracle.max_chain:
            z0 = oracle.A.apply(self.x)
            oracle._store(self.x, z0, 0)
            hit = (z0, 0)
            # a supplied gradient may carry drift from earlier lines
            self.grad_x = None
        self.z0, self.depth = hit
        self._zd = None

    def _image_d(self):
        if self._zd is None:
            self._zd = self.oracle.A.apply(self.d)
        return self._zd

    def _image(self, tau, point):
        if tau == 0:
            return self.z0
        z = self.z0 + tau * self._image_d()
        self.oracle._store(self._point(tau, point), z, self.depth + 1)
        return z

    def _grad_x(self):
        if self.grad_x is None:
            self.grad_x = self.oracle.A.apply_adjoint(self.oracle._dh(self.z0))
        return self.grad_x

    def value(self, tau, point=None):
        self.oracle.f_evals += 1
        return float(self.oracle._h(self._image(tau, point)))

    def value_grad(self, tau, point=None):
        oracle = self.oracle
        z = self._image(tau, point)
        oracle.f_evals += 1
        oracle.grad_evals += 1
        if oracle.affine_gradient:
            grad = self._grad_x() if tau == 0 else self._grad_x() + tau * self.curvature()
        else:
            grad = oracle.A.apply_adjoint(oracle._dh(z))
        return float(oracle._h(z)), grad

    def gradient(self, tau, point=None):
        oracle = self.oracle
        oracle.grad_evals += 1
        if oracle.affine_gradient:
            return self._grad_x() if tau == 0 else self._grad_x() + tau * self.curvature()
        return oracle.A.apply_adjoint(oracle._dh(self._image(tau, point)))

    def curvature(self):
        if self._curv is None:
            self.oracle.hvps += 1
            zd = self._image_d()
            if self.oracle.affine_gradient:
                self._curv = self.oracle.A.apply_adjoint(zd)
            else:
                self._curv = self.oracle.A.apply_adjoint(self.oracle._d2h(self.z0) * zd)
        return self._curv


def quadratic_loss(A, b, lipschitz=None):
    return QuadraticLoss(A, b, lipschitz)


def logistic_loss(A, labels, lipschitz=None):
    return LogisticLoss(A, labels, lipschitz)


def robust_loss(A, b, lipschitz=None):
    return RobustLoss(A, b, lipschitz)


def hvp_or_fd(oracle, x, v, grad_x=None):
    """Return ``(H v, analytic)`` with ``H`` the Hessian of ``f`` at ``x``.

    Uses the oracle's analytic product when it has one, else a forward
    difference of gradients.  ``grad_x`` avoids recomputing ``grad f(x)`` on
    the difference path.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return np.zeros_like(v), True
    if oracle.has_hvp:
        return oracle.hvp(x, v), True
    eps = np.sqrt(np.finfo(float).eps) * (1.0 + np.linalg.norm(x)) / max(nv, np.finfo(float).tiny)
    if grad_x is None:
        grad_x = oracle.gradient(x)
    return (oracle.gradient(x + eps * v) - grad_x) / eps, False
