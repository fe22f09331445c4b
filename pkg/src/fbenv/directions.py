"""Search directions: steepest descent, dense BFGS and L-BFGS.

All engines share ``observe(s, y)`` / ``direction(grad)`` / ``reset()``.
Pairs with ``<s, y> <= curvature_floor * ||s|| ||y||`` are discarded, which
keeps the inverse-Hessian model positive definite and every direction a
descent direction.
"""

from __future__ import annotations

from collections import deque

import numpy as np

__all__ = [
    "SteepestDescent",
    "BFGS",
    "LBFGS",
    "make_direction",
    "descent_check",
]

CURVATURE_FLOOR = 1e-12


class SteepestDescent:
    """``d = -grad``; observes nothing."""

    mode = "steepest"

    def __init__(self, curvature_floor=CURVATURE_FLOOR):
        self.curvature_floor = curvature_floor
        self.accepted = 0
        self.rejected = 0

    def _admissible(self, s, y):
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(y))):
            return False
        sy = float(s @ y)
        return sy > self.curvature_floor * np.linalg.norm(s) * np.linalg.norm(y) and sy > 0

    def observe(self, s, y):
        """Feed a pair; returns whether it was accepted."""
        s = np.asarray(s, dtype=float)
        y = np.asarray(y, dtype=float)
        if not self._admissible(s, y):
            self.rejected += 1
            return False
        self._update(s, y)
        self.accepted += 1
        return True

    def _update(self, s, y):
        pass

    def direction(self, grad):
        return -np.asarray(grad, dtype=float)

    def reset(self):
        pass


class BFGS(SteepestDescent):
    """Dense inverse BFGS ``H`` with ``H y = s`` after each accepted update.

    ``scaling="first"`` rescales ``H0 = I`` by ``<s,y>/<y,y>`` of the first
    accepted pair; ``"none"`` keeps the identity.
    """

    mode = "bfgs-dense"

    def __init__(self, curvature_floor=CURVATURE_FLOOR, scaling="first"):
        super().__init__(curvature_floor)
        if scaling not in ("first", "none"):
            raise ValueError(f"unknown scaling {scaling!r}")
        self.scaling = scaling
        self.H = None
        self._fresh = True

    def reset(self):
        self.H = None
        self._fresh = True

    def _update(self, s, y):
        n = s.size
        if self.H is None:
            self.H = np.eye(n)
        sy = float(s @ y)
        if self._fresh and self.scaling == "first":
            self.H *= sy / float(y @ y)
        self._fresh = False
        rho = 1.0 / sy
        Hy = self.H @ y
        yHy = float(y @ Hy)
        # (I - rho s y^T) H (I - rho y s^T) + rho s s^T, expanded
        self.H = (self.H
                  - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                  + (rho * rho * yHy + rho) * np.outer(s, s))

    def direction(self, grad):
        grad = np.asarray(grad, dtype=float)
        if self.H is None:
            return -grad
        return -(self.H @ grad)


class LBFGS(SteepestDescent):
    """Limited-memory BFGS through the two-loop recursion.

    Keeps the ``memory`` most recent pairs.  The initial matrix is
    ``(<s,y>/<y,y>) I`` from the most recent pair (``scaling="latest"``), from
    the first pair since the last reset (``"first"``), or ``I`` (``"none"``).
    """

    mode = "lbfgs"

    def __init__(self, memory=5, curvature_floor=CURVATURE_FLOOR, scaling="latest"):
        super().__init__(curvature_floor)
        if memory < 1:
            raise ValueError("memory must be >= 1")
        if scaling not in ("latest", "first", "none"):
            raise ValueError(f"unknown scaling {scaling!r}")
        self.memory = int(memory)
        self.scaling = scaling
        self.pairs = deque(maxlen=self.memory)
        self._first_scale = None

    def reset(self):
        self.pairs.clear()
        self._first_scale = None

    def _update(self, s, y):
        sy = float(s @ y)
        if self._first_scale is None:
            self._first_scale = sy / float(y @ y)
        self.pairs.append((s.copy(), y.copy(), 1.0 / sy))

    def direction(self, grad):
        q = -np.asarray(grad, dtype=float)
        if not self.pairs:
            return q
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        if self.scaling == "latest":
            s, y, _ = self.pairs[-1]
            q *= float(s @ y) / float(y @ y)
        elif self.scaling == "first":
            q *= self._first_scale
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        return q


def make_direction(mode="lbfgs", memory=5, **kwargs):
    """Build a direction engine from a mode name such as ``"lbfgs"`` or ``"bfgs"``."""
    if mode == "steepest":
        return SteepestDescent(**kwargs)
    if mode in ("bfgs", "bfgs-dense"):
        return BFGS(**kwargs)
    if mode == "lbfgs":
        return LBFGS(memory=memory, **kwargs)
    raise ValueError(f"unknown direction mode {mode!r}; use steepest, bfgs or lbfgs")


def descent_check(d, grad):
    """True iff ``<d, grad> <= 0``."""
    return float(np.dot(d, grad)) <= 0.0
