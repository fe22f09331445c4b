"""Matrix-free linear operators with matvec accounting.

Every operator maps ``R^input_dim -> R^output_dim`` and exposes ``apply`` and
``apply_adjoint``.  Each call bumps a counter so solver traces can report the
number of products with ``A`` and ``A^T``, the cost measure used to compare
first-order methods.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

__all__ = [
    "DimensionError",
    "LinearOperator",
    "DenseOperator",
    "SparseOperator",
    "SelectionOperator",
    "DiagonalOperator",
    "IdentityOperator",
    "CompositionOperator",
    "HaarWavelet2D",
    "NormEstimate",
    "norm_estimate",
    "aslinearoperator",
    "read_matrix_market",
    "read_dense_csv",
]


class DimensionError(ValueError):
    """Raised when a vector does not match the dimension an operator expects."""

    def __init__(self, what, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected dimension {expected}, got {actual}")


class LinearOperator:
    """Base class for matrix-free linear maps.

    Subclasses implement ``_matvec`` and ``_rmatvec`` on 1-D float arrays.
    Operators are immutable after construction; only the counters change.
    """

    kind = "generic"
    orthonormal = False

    def __init__(self, output_dim, input_dim):
        if output_dim < 1 or input_dim < 1:
            raise ValueError("operator dimensions must be positive")
        self.output_dim = int(output_dim)
        self.input_dim = int(input_dim)
        self._lock = threading.Lock()
        self.n_forward = 0
        self.n_adjoint = 0

    @property
    def shape(self):
        return (self.output_dim, self.input_dim)

    @property
    def matvecs(self):
        return self.n_forward + self.n_adjoint

    def reset_counters(self):
        with self._lock:
            self.n_forward = 0
            self.n_adjoint = 0

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.input_dim,):
            raise DimensionError(f"{type(self).__name__}.apply", self.input_dim,
                                 v.shape[0] if v.ndim == 1 else v.shape)
        with self._lock:
            self.n_forward += 1
        return self._matvec(v)

    def apply_adjoint(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.output_dim,):
            raise DimensionError(f"{type(self).__name__}.apply_adjoint", self.output_dim,
                                 v.shape[0] if v.ndim == 1 else v.shape)
        with self._lock:
            self.n_adjoint += 1
        return self._rmatvec(v)

    def _matvec(self, v):
        raise NotImplementedError

    def _rmatvec(self, v):
        raise NotImplementedError

    def to_dense(self):
        """Materialize the operator column by column (uncounted)."""
        cols = [self._matvec(e) for e in np.eye(self.input_dim)]
        return np.column_stack(cols)

    def __matmul__(self, other):
        if isinstance(other, LinearOperator):
            return CompositionOperator(self, other)
        return self.apply(other)

    def __repr__(self):
        return f"<{type(self).__name__} {self.output_dim}x{self.input_dim} kind={self.kind}>"


class DenseOperator(LinearOperator):
    """Wraps a dense 2-D array.

    Pass ``orthonormal=True`` only for square matrices with ``M^T M = I``; the
    flag is checked to 1e-10 at construction.
    """

    kind = "dense"

    def __init__(self, matrix, orthonormal=False):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError("dense operator needs a 2-D array")
        super().__init__(*matrix.shape)
        self.matrix = matrix
        self.matrix.setflags(write=False)
        if orthonormal:
            m, n = matrix.shape
            if m != n or not np.allclose(matrix.T @ matrix, np.eye(n), atol=1e-10, rtol=0):
                raise ValueError("matrix is not orthonormal")
            self.orthonormal = True
            self.kind = "orthonormal-transform"

    def _matvec(self, v):
        return self.matrix @ v

    def _rmatvec(self, v):
        return self.matrix.T @ v

    def to_dense(self):
        return self.matrix.copy()


class SparseOperator(LinearOperator):
    """Row-compressed sparse matrix; the adjoint never forms the transpose."""

    kind = "sparse-row-compressed"

    def __init__(self, matrix):
        matrix = sp.csr_matrix(matrix, dtype=float)
        super().__init__(*matrix.shape)
        self.matrix = matrix

    def _matvec(self, v):
        return self.matrix @ v

    def _rmatvec(self, v):
        # csr_matrix.T is a csc view of the same buffers, no copy
        return self.matrix.T @ v

    def to_dense(self):
        return self.matrix.toarray()


class SelectionOperator(LinearOperator):
    """Gathers the entries ``v[indices]``; the adjoint scatters them back."""

    kind = "entry-selection"

    def __init__(self, indices, input_dim):
        indices = np.asarray(indices, dtype=np.intp)
        if indices.ndim != 1 or indices.size == 0:
            raise ValueError("selection needs a non-empty 1-D index list")
        if indices.min() < 0 or indices.max() >= input_dim:
            raise ValueError("selection index out of range")
        if np.unique(indices).size != indices.size:
            raise ValueError("selection indices must be distinct")
        super().__init__(indices.size, input_dim)
        self.indices = indices
        self.indices.setflags(write=False)

    def _matvec(self, v):
        return v[self.indices]

    def _rmatvec(self, v):
        out = np.zeros(self.input_dim)
        out[self.indices] = v
        return out


class DiagonalOperator(LinearOperator):
    kind = "diagonal"

    def __init__(self, diag):
        diag = np.array(diag, dtype=float).ravel()
        super().__init__(diag.size, diag.size)
        self.diag = diag
        self.diag.setflags(write=False)

    def _matvec(self, v):
        return self.diag * v

    _rmatvec = _matvec


class IdentityOperator(LinearOperator):
    kind = "identity"
    orthonormal = True

    def __init__(self, dim):
        super().__init__(dim, dim)

    def _matvec(self, v):
        return v.copy()

    _rmatvec = _matvec


class CompositionOperator(LinearOperator):
    """``outer @ inner``: applies ``inner`` first, adjoint in reverse order.

    Component counters are bumped as well, so products with e.g. a blur inside
    a composition stay visible.
    """

    kind = "composition"

    def __init__(self, outer, inner):
        if outer.input_dim != inner.output_dim:
            raise DimensionError("composition", outer.input_dim, inner.output_dim)
        super().__init__(outer.output_dim, inner.input_dim)
        self.outer = outer
        self.inner = inner
        self.orthonormal = bool(outer.orthonormal and inner.orthonormal)

    def _matvec(self, v):
        return self.outer.apply(self.inner.apply(v))

    def _rmatvec(self, v):
        return self.inner.apply_adjoint(self.outer.apply_adjoint(v))


class HaarWavelet2D(LinearOperator):
    """Orthonormal multi-level 2-D Haar transform of a ``rows x cols`` image.

    Images are flattened column-major.  The coefficient layout is the usual
    pyramid: after each level the approximation occupies the top-left
    quadrant of the current block.
    """

    kind = "orthonormal-transform"
    orthonormal = True

    def __init__(self, rows, cols, levels=4):
        step = 2 ** levels
        if rows % step or cols % step:
            raise ValueError(f"image dims ({rows}, {cols}) must be divisible by {step}")
        super().__init__(rows * cols, rows * cols)
        self.rows, self.cols, self.levels = rows, cols, levels

    @staticmethod
    def _split(a, axis):
        even = np.take(a, np.arange(0, a.shape[axis], 2), axis=axis)
        odd = np.take(a, np.arange(1, a.shape[axis], 2), axis=axis)
        return np.concatenate([(even + odd), (even - odd)], axis=axis) / np.sqrt(2.0)

    @staticmethod
    def _merge(a, axis):
        half = a.shape[axis] // 2
        s = np.take(a, np.arange(half), axis=axis)
        d = np.take(a, np.arange(half, 2 * half), axis=axis)
        out = np.empty_like(a)
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(0, None, 2)
        out[tuple(idx)] = (s + d) / np.sqrt(2.0)
        idx[axis] = slice(1, None, 2)
        out[tuple(idx)] = (s - d) / np.sqrt(2.0)
        return out

    def _matvec(self, v):
        img = v.reshape((self.rows, self.cols), order="F").copy()
        r, c = self.rows, self.cols
        for _ in range(self.levels):
            block = img[:r, :c]
            block = self._split(self._split(block, 0), 1)
            img[:r, :c] = block
            r, c = r // 2, c // 2
        return img.ravel(order="F")

    def _rmatvec(self, v):
        img = v.reshape((self.rows, self.cols), order="F").copy()
        sizes = [(self.rows >> k, self.cols >> k) for k in range(self.levels)]
        for r, c in reversed(sizes):
            img[:r, :c] = self._merge(self._merge(img[:r, :c], 1), 0)
        return img.ravel(order="F")


def aslinearoperator(a):
    """Coerce arrays and scipy sparse matrices to a :class:`LinearOperator`."""
    if isinstance(a, LinearOperator):
        return a
    if sp.issparse(a):
        return SparseOperator(a)
    return DenseOperator(a)


@dataclass
class NormEstimate:
    """Result of :func:`norm_estimate`: estimate of ``||A^T A||``."""

    value: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)

    def __float__(self):
        return float(self.value)


def norm_estimate(op, max_iters=200, tol=1e-4, seed=0):
    """Estimate the largest eigenvalue of ``A^T A`` by power iteration.

    The start vector is drawn from a fixed seed so that Lipschitz estimates,
    and therefore step sizes, are reproducible.  Iteration stops when two
    successive Rayleigh quotients agree to ``tol`` relative; running out of
    iterations returns the last quotient with ``converged=False``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.input_dim)
    v /= np.linalg.norm(v)
    history = []
    prev = None
    for it in range(1, max_iters + 1):
        w = op.apply_adjoint(op.apply(v))
        rq = float(v @ w)
        history.append(rq)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return NormEstimate(0.0, it, True, history)
        if prev is not None and abs(rq - prev) <= tol * abs(rq):
            return NormEstimate(rq, it, True, history)
        prev = rq
        v = w / nw
    return NormEstimate(history[-1], max_iters, False, history)


def read_matrix_market(path):
    """Load a MatrixMarket coordinate (or array) file as an operator."""
    m = scipy.io.mmread(str(path))
    if sp.issparse(m):
        return SparseOperator(m)
    return DenseOperator(np.asarray(m))


def read_dense_csv(path):
    """Load a small dense matrix stored as comma-separated rows."""
    m = np.loadtxt(str(path), delimiter=",", ndmin=2)
    return DenseOperator(m)
