"""Proximal oracles for the nonsmooth term ``g``.

``prox(gamma, x)`` returns the pair ``(p, g(p))`` with
``p = argmin_u g(u) + ||u - x||^2 / (2 gamma)``.  Returning ``g(p)`` together
with ``p`` is what lets the forward-backward envelope be evaluated from one
prox call; for the nuclear norm it is read off the thresholded spectrum.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse.linalg as spla

from .linops import DimensionError

__all__ = [
    "ProxOracle",
    "ZeroFunction",
    "L1Norm",
    "GroupL2Norm",
    "NuclearNorm",
    "BoxIndicator",
    "OrthogonalCompose",
    "SeparableSum",
    "zero_function",
    "l1_norm",
    "group_l2",
    "nuclear_norm",
    "nonneg_indicator",
    "box_indicator",
    "orthogonal_compose",
    "separable_sum",
    "moreau_env",
    "normalize_blocks",
]


class ProxOracle:
    """Interface for a proper closed convex ``g`` on ``R^dim``."""

    block_structure = None

    def __init__(self, dim):
        self.dim = int(dim)
        self.prox_calls = 0
        self.svds = 0

    @property
    def operators(self):
        return ()

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionError(type(self).__name__, self.dim, x.shape)
        return x

    def __call__(self, x):
        return float(self._value(self._check(x)))

    def prox(self, gamma, x):
        if not gamma > 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        x = self._check(x)
        self.prox_calls += 1
        p, gp = self._prox(float(gamma), x)
        return p, float(gp)

    def reset(self):
        """Clear per-run state; stateless oracles ignore this."""

    def counters(self):
        return {
            "prox_calls": self.prox_calls,
            "svds": self.svds,
            "transforms": sum(op.matvecs for op in self.operators),
        }

    def reset_counters(self):
        self.prox_calls = 0
        self.svds = 0
        for op in self.operators:
            op.reset_counters()

    def _value(self, x):
        raise NotImplementedError

    def _prox(self, gamma, x):
        raise NotImplementedError


class ZeroFunction(ProxOracle):
    """``g = 0``; the prox is the identity."""

    def _value(self, x):
        return 0.0

    def _prox(self, gamma, x):
        return x.copy(), 0.0


class L1Norm(ProxOracle):
    """``g(x) = lam * ||x||_1``, prox by soft thresholding."""

    def __init__(self, lam, dim):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        super().__init__(dim)
        self.lam = float(lam)

    def _value(self, x):
        return self.lam * np.abs(x).sum()

    def _prox(self, gamma, x):
        p = np.sign(x) * np.maximum(np.abs(x) - gamma * self.lam, 0.0)
        return p, self.lam * np.abs(p).sum()


def normalize_blocks(blocks, dim=None):
    """Turn block sizes or index lists into a list of index arrays.

    Raises ``ValueError`` unless the blocks partition ``range(dim)``.
    """
    blocks = list(blocks)
    if all(np.ndim(b) == 0 for b in blocks):
        sizes = [int(b) for b in blocks]
        if any(s < 1 for s in sizes):
            raise ValueError("block sizes must be positive")
        edges = np.cumsum([0] + sizes)
        out = [np.arange(edges[i], edges[i + 1]) for i in range(len(sizes))]
    else:
        out = [np.asarray(b, dtype=np.intp).ravel() for b in blocks]
    total = sum(b.size for b in out)
    if dim is None:
        dim = total
    flat = np.concatenate(out) if out else np.empty(0, dtype=np.intp)
    if total != dim or flat.size != np.unique(flat).size:
        raise ValueError("blocks overlap or do not cover every coordinate")
    if flat.size and (flat.min() < 0 or flat.max() >= dim):
        raise ValueError("block index out of range")
    return out


class GroupL2Norm(ProxOracle):
    """``g(x) = lam * sum_i ||x_i||_2`` over a partition of the coordinates."""

    def __init__(self, lam, blocks, dim=None):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        blocks = normalize_blocks(blocks, dim)
        super().__init__(sum(b.size for b in blocks))
        self.lam = float(lam)
        self.blocks = blocks
        self.block_structure = blocks

    def _value(self, x):
        return self.lam * sum(np.linalg.norm(x[b]) for b in self.blocks)

    def _prox(self, gamma, x):
        p = np.zeros_like(x)
        gp = 0.0
        thresh = gamma * self.lam
        for b in self.blocks:
            nrm = np.linalg.norm(x[b])
            if nrm > thresh:
                p[b] = (1.0 - thresh / nrm) * x[b]
                gp += nrm - thresh
        return p, self.lam * gp


class NuclearNorm(ProxOracle):
    """``g(X) = lam * ||X||_*`` for ``X`` stored column-major as a vector.

    ``svd_policy="full"`` thresholds a full SVD.  ``"rank-adaptive"`` computes
    only the ``nu`` leading singular triples, starting at ``nu = 10``; after
    each call ``nu`` becomes the index of the first singular value at or
    below ``gamma * lam``, or grows by 5 if none was.  When the computed
    triples do not reach the threshold the call itself enlarges ``nu`` and
    recomputes, so the result always equals full thresholding.
    """

    initial_rank = 10
    rank_increment = 5

    def __init__(self, lam, rows, cols, svd_policy="full"):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        if svd_policy not in ("full", "rank-adaptive"):
            raise ValueError(f"unknown svd_policy {svd_policy!r}")
        super().__init__(rows * cols)
        self.lam = float(lam)
        self.rows, self.cols = int(rows), int(cols)
        self.svd_policy = svd_policy
        self.rank = self.initial_rank
        self.rank_history = []

    def reset(self):
        self.rank = self.initial_rank
        self.rank_history = []

    def _as_matrix(self, x):
        if not np.all(np.isfinite(x)):
            raise ValueError("nuclear norm needs finite entries")
        return x.reshape((self.rows, self.cols), order="F")

    def _value(self, x):
        self.svds += 1
        return self.lam * np.linalg.svd(self._as_matrix(x), compute_uv=False).sum()

    def _partial_svd(self, X, k):
        self.svds += 1
        if k >= min(X.shape):
            return np.linalg.svd(X, full_matrices=False)
        v0 = np.ones(min(X.shape)) / np.sqrt(min(X.shape))
        u, s, vt = spla.svds(X, k=k, solver="arpack", tol=0, v0=v0)
        order = np.argsort(s)[::-1]
        return u[:, order], s[order], vt[order]

    def _prox(self, gamma, x):
        X = self._as_matrix(x)
        thresh = gamma * self.lam
        full_rank = min(X.shape)
        if self.svd_policy == "full":
            u, s, vt = self._partial_svd(X, full_rank)
        else:
            nu = min(self.rank, full_rank)
            u, s, vt = self._partial_svd(X, nu)
            while s[-1] > thresh and nu < full_rank:
                nu = min(nu + self.rank_increment, full_rank)
                u, s, vt = self._partial_svd(X, nu)
            below = np.flatnonzero(s <= thresh)
            if below.size:
                self.rank = int(below[0]) + 1
            else:
                self.rank = min(nu + self.rank_increment, full_rank)
            self.rank_history.append(nu)
        shrunk = np.maximum(s - thresh, 0.0)
        keep = shrunk > 0
        P = (u[:, keep] * shrunk[keep]) @ vt[keep]
        return P.ravel(order="F"), self.lam * shrunk.sum()


class BoxIndicator(ProxOracle):
    """Indicator of ``{x : lo <= x <= hi}``; the prox is clamping.

    Membership is tested with slack ``1e-12 * (1 + ||x||)`` so that points
    produced by the prox itself always evaluate to zero.
    """

    slack = 1e-12

    def __init__(self, lo, hi, dim):
        super().__init__(dim)
        self.lo = np.broadcast_to(np.asarray(lo, dtype=float), (self.dim,)).copy()
        self.hi = np.broadcast_to(np.asarray(hi, dtype=float), (self.dim,)).copy()
        if np.any(self.lo > self.hi):
            raise ValueError("box needs lo <= hi componentwise")

    def _value(self, x):
        tol = self.slack * (1.0 + np.linalg.norm(x))
        if np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol):
            return 0.0
        return np.inf

    def _prox(self, gamma, x):
        return np.clip(x, self.lo, self.hi), 0.0


class OrthogonalCompose(ProxOracle):
    """``g(x) = inner(W x)`` for an orthonormal ``W``; prox is ``W^T prox_inner(W x)``."""

    def __init__(self, inner, W):
        if not getattr(W, "orthonormal", False):
            raise ValueError("orthogonal_compose needs an operator flagged orthonormal")
        if W.input_dim != W.output_dim or W.output_dim != inner.dim:
            raise DimensionError("orthogonal_compose", inner.dim, W.shape)
        super().__init__(W.input_dim)
        self.inner = inner
        self.W = W

    @property
    def operators(self):
        return (self.W,)

    def counters(self):
        out = super().counters()
        out["svds"] += self.inner.svds
        return out

    def reset(self):
        self.inner.reset()

    def _value(self, x):
        return self.inner(self.W.apply(x))

    def _prox(self, gamma, x):
        q, gq = self.inner.prox(gamma, self.W.apply(x))
        return self.W.apply_adjoint(q), gq


class SeparableSum(ProxOracle):
    """``g(x) = sum_j g_j(x[idx_j])`` for oracles acting on disjoint blocks.

    ``parts`` holds ``(oracle, indices)`` pairs, or bare oracles that take
    consecutive blocks of their own dimension.
    """

    def __init__(self, parts):
        parts = [p if isinstance(p, tuple) else (p, p.dim) for p in parts]
        oracles = [o for o, _ in parts]
        blocks = normalize_blocks([idx for _, idx in parts])
        for o, b in zip(oracles, blocks):
            if o.dim != b.size:
                raise DimensionError("separable_sum block", o.dim, b.size)
        super().__init__(sum(b.size for b in blocks))
        self.parts = list(zip(oracles, blocks))
        self.block_structure = blocks

    def reset(self):
        for o, _ in self.parts:
            o.reset()

    def counters(self):
        out = super().counters()
        for o, _ in self.parts:
            for k, v in o.counters().items():
                if k != "prox_calls":
                    out[k] += v
        return out

    def _value(self, x):
        return sum(o(x[b]) for o, b in self.parts)

    def _prox(self, gamma, x):
        p = np.empty_like(x)
        gp = 0.0
        for o, b in self.parts:
            p[b], gb = o.prox(gamma, x[b])
            gp += gb
        return p, gp


def zero_function(dim):
    return ZeroFunction(dim)


def l1_norm(lam, dim):
    return L1Norm(lam, dim)


def group_l2(lam, blocks, dim=None):
    return GroupL2Norm(lam, blocks, dim)


def nuclear_norm(lam, rows, cols, svd_policy="full"):
    return NuclearNorm(lam, rows, cols, svd_policy)


def nonneg_indicator(dim):
    return BoxIndicator(0.0, np.inf, dim)


def box_indicator(lo, hi, dim=None):
    if dim is None:
        dim = np.size(lo) if np.ndim(lo) else np.size(hi)
    return BoxIndicator(lo, hi, dim)


def orthogonal_compose(inner, W):
    return OrthogonalCompose(inner, W)


def separable_sum(parts):
    return SeparableSum(parts)


def moreau_env(oracle, gamma, x):
    """Moreau envelope ``min_u g(u) + ||u - x||^2 / (2 gamma)``."""
    x = np.asarray(x, dtype=float)
    p, gp = oracle.prox(gamma, x)
    d = p - x
    return gp + float(d @ d) / (2.0 * gamma)
