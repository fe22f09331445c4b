"""Benchmark problem families, synthetic generators and dataset readers.

Families: ``lasso``, ``logreg`` (l1-regularized logistic regression),
``group-lasso``, ``matcomp`` (nuclear-norm matrix completion) and
``imrestore`` (deblurring with a nonconvex robust loss and an l1 penalty on
Haar coefficients).  Matrices are flattened column-major throughout.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .fbe import CompositeProblem
from .linops import (HaarWavelet2D, SelectionOperator, SparseOperator,
                     aslinearoperator, read_dense_csv, read_matrix_market)
from .prox import group_l2, l1_norm, normalize_blocks, nuclear_norm, orthogonal_compose
from .smooth import logistic_loss, quadratic_loss, robust_loss

__all__ = [
    "FAMILIES",
    "DatasetError",
    "DataBundle",
    "ProblemSpec",
    "lambda_max",
    "gen_synthetic",
    "build_lasso",
    "build_logreg",
    "build_group_lasso",
    "build_matcomp",
    "build_imrestore",
    "gaussian_kernel",
    "gaussian_blur_operator",
    "synthetic_image",
    "load_dataset",
    "read_libsvm",
    "read_pgm",
    "write_pgm",
    "build_problem",
]

FAMILIES = ("lasso", "logreg", "group-lasso", "matcomp", "imrestore")


class DatasetError(ValueError):
    """Unreadable or malformed data file; names the path and the position."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


def lambda_max(family, A, b, blocks=None, shape=None):
    """Smallest regularization weight for which ``x = 0`` is optimal.

    ``lasso``: ``||A^T b||_inf``; ``logreg``: ``||A^T b||_inf / 2``;
    ``group-lasso``: ``max_i ||A_i^T b||_2`` over the column blocks.
    ``matcomp`` (spectral norm of ``A^T b`` reshaped to ``shape``) is also
    accepted.
    """
    A = aslinearoperator(A)
    atb = A._rmatvec(np.asarray(b, dtype=float))
    if family == "lasso":
        return float(np.abs(atb).max())
    if family == "logreg":
        return 0.5 * float(np.abs(atb).max())
    if family == "group-lasso":
        if blocks is None:
            raise ValueError("group-lasso lambda_max needs blocks")
        return max(float(np.linalg.norm(atb[idx])) for idx in normalize_blocks(blocks, A.input_dim))
    if family == "matcomp":
        if shape is None:
            raise ValueError("matcomp lambda_max needs the matrix shape")
        return float(np.linalg.norm(atb.reshape(shape, order="F"), 2))
    raise ValueError(f"lambda_max not defined for family {family!r}")


def _resolve_lambda(lam, lambda_fraction, lmax):
    if lam is not None:
        return float(lam)
    if not 0 < lambda_fraction:
        raise ValueError("lambda_fraction must be positive")
    return float(lambda_fraction) * lmax


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def build_lasso(A, b, lam=None, lambda_fraction=0.1, lipschitz=None):
    A = aslinearoperator(A)
    lmax = lambda_max("lasso", A, b)
    lam = _resolve_lambda(lam, lambda_fraction, lmax)
    problem = CompositeProblem(quadratic_loss(A, b, lipschitz), l1_norm(lam, A.input_dim),
                               name="lasso", meta={"lam": lam, "lambda_max": lmax})
    return problem


def build_logreg(A, labels, lam=None, lambda_fraction=0.1, lipschitz=None):
    A = aslinearoperator(A)
    lmax = lambda_max("logreg", A, labels)
    lam = _resolve_lambda(lam, lambda_fraction, lmax)
    return CompositeProblem(logistic_loss(A, labels, lipschitz), l1_norm(lam, A.input_dim),
                            name="logreg", meta={"lam": lam, "lambda_max": lmax})


def build_group_lasso(A, b, blocks, lam=None, lambda_fraction=0.1, lipschitz=None):
    A = aslinearoperator(A)
    blocks = normalize_blocks(blocks, A.input_dim)
    lmax = lambda_max("group-lasso", A, b, blocks)
    lam = _resolve_lambda(lam, lambda_fraction, lmax)
    return CompositeProblem(quadratic_loss(A, b, lipschitz), group_l2(lam, blocks, A.input_dim),
                            name="group-lasso", meta={"lam": lam, "lambda_max": lmax})


def build_matcomp(rows, cols, observed, values, lam=None, lambda_fraction=0.1,
                  svd_policy="full"):
    """Matrix completion from observed entries.

    ``observed`` holds column-major linear indices ``i + j * rows`` (or an
    ``(k, 2)`` array of ``(i, j)`` pairs); ``values`` the known entries.
    """
    observed = np.asarray(observed)
    if observed.ndim == 2:
        observed = observed[:, 0] + observed[:, 1] * rows
    A = SelectionOperator(observed, rows * cols)
    values = np.asarray(values, dtype=float)
    lmax = lambda_max("matcomp", A, values, shape=(rows, cols))
    lam = _resolve_lambda(lam, lambda_fraction, lmax)
    # entry selection has A A^T = I, so L_f = 1 exactly
    return CompositeProblem(quadratic_loss(A, values, lipschitz=1.0),
                            nuclear_norm(lam, rows, cols, svd_policy),
                            name="matcomp", meta={"lam": lam, "lambda_max": lmax,
                                                  "rows": rows, "cols": cols})


def gaussian_kernel(size, sigma):
    """Normalized 1-D Gaussian weights of odd length ``size``."""
    if size < 1 or size % 2 == 0:
        raise ValueError("blur size must be a positive odd integer")
    t = np.arange(size) - size // 2
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _blur_matrix_1d(n, kernel):
    half = kernel.size // 2
    B = sp.lil_matrix((n, n))
    for i in range(n):
        for o in range(-half, half + 1):
            j = i + o
            # symmetric reflection: ... b a | a b c ... | c b ...
            while j < 0 or j >= n:
                j = -j - 1 if j < 0 else 2 * n - j - 1
            B[i, j] += kernel[o + half]
    return B.tocsr()


def gaussian_blur_operator(rows, cols, size=9, sigma=4.0):
    """Separable Gaussian blur with reflective boundary, as a sparse operator
    on column-major flattened ``rows x cols`` images."""
    k = gaussian_kernel(size, sigma)
    Br = _blur_matrix_1d(rows, k)
    Bc = _blur_matrix_1d(cols, k)
    return SparseOperator(sp.kron(Bc, Br, format="csr"))


def synthetic_image(rows=32, cols=32, seed=0):
    """Deterministic piecewise-constant test image with values in [0, 1]."""
    rng = np.random.default_rng(seed)
    img = np.full((rows, cols), 0.2)
    ii, jj = np.mgrid[0:rows, 0:cols]
    for _ in range(3):
        r0, c0 = rng.integers(0, rows // 2), rng.integers(0, cols // 2)
        h, w = rng.integers(rows // 4, rows // 2), rng.integers(cols // 4, cols // 2)
        img[r0:r0 + h, c0:c0 + w] = rng.uniform(0.4, 1.0)
    cr, cc, rad = rows * 0.65, cols * 0.6, min(rows, cols) * 0.2
    img[(ii - cr) ** 2 + (jj - cc) ** 2 <= rad**2] = 0.9
    return img


def build_imrestore(image, blur_size=9, blur_sigma=4.0, noise_sigma=1e-3, lam=1e-4,
                    levels=4, seed=0, lipschitz=None):
    """Deblurring problem ``sum log(1 + (Ax - b)_i^2) + lam ||W x||_1``.

    ``b`` is the blurred image plus Gaussian noise; ``W`` is the orthonormal
    Haar transform with ``levels`` levels.
    """
    image = np.asarray(image, dtype=float)
    rows, cols = image.shape
    step = 2**levels
    if rows % step or cols % step:
        raise ValueError(f"image dims ({rows}, {cols}) must be divisible by {step}")
    A = gaussian_blur_operator(rows, cols, blur_size, blur_sigma)
    rng = np.random.default_rng(seed)
    clean = image.ravel(order="F")
    b = A._matvec(clean) + noise_sigma * rng.standard_normal(rows * cols)
    W = HaarWavelet2D(rows, cols, levels)
    g = orthogonal_compose(l1_norm(lam, rows * cols), W)
    return CompositeProblem(robust_loss(A, b, lipschitz), g, name="imrestore",
                            meta={"lam": float(lam), "rows": rows, "cols": cols, "b": b,
                                  "image": clean, "noise_hash": _digest(b)})


def _sparse_truth(rng, n, k):
    x = np.zeros(n)
    idx = rng.choice(n, size=k, replace=False)
    x[idx] = rng.standard_normal(k)
    return x


def gen_synthetic(family, params=None, seed=0):
    """Seeded instance of a family; returns ``(problem, metadata)``.

    Data follow the standard recipe: ``A`` with i.i.d. standard normal
    entries, a sparse (or block-sparse, or low-rank) ground truth, and
    observations corrupted by Gaussian noise of standard deviation ``noise``
    (default 0.1).  ``lam`` fixes the weight; otherwise
    ``lambda_fraction * lambda_max`` is used.
    """
    p = dict(params or {})
    rng = np.random.default_rng(seed)
    noise = float(p.get("noise", 0.1))
    lam = p.get("lam")
    frac = float(p.get("lambda_fraction", 0.1))
    meta = {"family": family, "seed": seed, "params": dict(p)}

    if family in ("lasso", "logreg"):
        m, n = int(p.get("m", 100)), int(p.get("n", 200))
        k = int(p.get("nnz", max(1, round(float(p.get("density", 0.05)) * n))))
        if not 1 <= k <= n:
            raise ValueError("nnz must lie in [1, n]")
        A = rng.standard_normal((m, n))
        if p.get("normalize", False):
            A /= np.sqrt(m)
        x_true = _sparse_truth(rng, n, k)
        v = rng.standard_normal(m)
        if family == "lasso":
            b = A @ x_true + noise * v
            problem = build_lasso(A, b, lam, frac)
        else:
            margin = A @ x_true + noise * v
            b = np.where(margin >= 0, 1.0, -1.0)
            problem = build_logreg(A, b, lam, frac)
        meta.update(x_true=x_true, b=b, noise_hash=_digest(v))
    elif family == "group-lasso":
        m = int(p.get("m", 200))
        N = int(p.get("n_blocks", 20))
        size = int(p.get("block_size", 10))
        active = int(p.get("active_blocks", 2))
        if not 1 <= active <= N:
            raise ValueError("active_blocks must lie in [1, n_blocks]")
        n = N * size
        A = rng.standard_normal((m, n))
        if p.get("normalize", False):
            A /= np.sqrt(m)
        x_true = np.zeros(n)
        for blk in rng.choice(N, size=active, replace=False):
            x_true[blk * size:(blk + 1) * size] = rng.standard_normal(size)
        v = rng.standard_normal(m)
        b = A @ x_true + noise * v
        blocks = [size] * N
        problem = build_group_lasso(A, b, blocks, lam, frac)
        meta.update(x_true=x_true, b=b, blocks=blocks, noise_hash=_digest(v))
    elif family == "matcomp":
        rows, cols = int(p.get("rows", 20)), int(p.get("cols", 15))
        rank = int(p.get("rank", 2))
        frac_obs = float(p.get("observed", 0.6))
        noise = float(p.get("noise", 0.0))
        M = rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))
        k = max(1, int(round(frac_obs * rows * cols)))
        obs = np.sort(rng.choice(rows * cols, size=k, replace=False))
        v = rng.standard_normal(k)
        vals = M.ravel(order="F")[obs] + noise * v
        problem = build_matcomp(rows, cols, obs, vals, lam, frac,
                                svd_policy=p.get("svd_policy", "full"))
        meta.update(x_true=M.ravel(order="F"), observed=obs, b=vals, noise_hash=_digest(v))
    elif family == "imrestore":
        rows, cols = int(p.get("rows", 32)), int(p.get("cols", 32))
        img = p.get("image")
        if img is None:
            img = synthetic_image(rows, cols, seed)
        problem = build_imrestore(img, int(p.get("blur_size", 9)), float(p.get("blur_sigma", 4.0)),
                                  float(p.get("noise", 1e-3)), float(lam if lam is not None else 1e-4),
                                  int(p.get("levels", 4)), seed)
        meta.update(x_true=problem.meta["image"], b=problem.meta["b"],
                    noise_hash=problem.meta["noise_hash"])
    else:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    meta["lam"] = problem.meta["lam"]
    meta["lambda_max"] = problem.meta.get("lambda_max")
    problem.meta.update({k: v for k, v in meta.items() if k not in problem.meta})
    return problem, meta


# ---------------------------------------------------------------------------
# file formats


@dataclass
class DataBundle:
    """Parsed contents of a data file."""

    format: str
    A: object = None
    b: np.ndarray = None
    image: np.ndarray = None
    shape: tuple = ()
    extra: dict = field(default_factory=dict)


def read_libsvm(path, n_features=None):
    """Parse LIBSVM text (``label idx:val ...``, 1-based indices).

    Returns ``(csr_matrix, labels)`` with 0-based columns.  ``n_features``
    bounds the indices when given.
    """
    labels, rows, cols, vals = [], [], [], []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DatasetError(path, f"cannot open: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise DatasetError(path, f"bad label {tokens[0]!r}", lineno) from None
            r = len(labels)
            labels.append(label)
            last = 0
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise DatasetError(path, f"expected index:value, got {tok!r}", lineno)
                try:
                    j, v = int(idx), float(val)
                except ValueError:
                    raise DatasetError(path, f"bad entry {tok!r}", lineno) from None
                if j < 1 or (n_features is not None and j > n_features):
                    raise DatasetError(path, f"feature index {j} out of bounds", lineno)
                if j <= last:
                    raise DatasetError(path, "feature indices must increase", lineno)
                last = j
                rows.append(r)
                cols.append(j - 1)
                vals.append(v)
    if not labels:
        raise DatasetError(path, "no data lines")
    n = n_features if n_features is not None else (max(cols) + 1 if cols else 1)
    X = sp.csr_matrix((vals, (rows, cols)), shape=(len(labels), n))
    return X, np.array(labels)


def read_pgm(path):
    """Read an 8-bit binary PGM (P5) file, rescaled to [0, 1]."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetError(path, f"cannot open: {exc.strerror}") from exc
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)").match(data, pos)
        if m is None:
            raise DatasetError(path, f"truncated header at byte {pos}")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P5":
        raise DatasetError(path, f"not a binary PGM (magic {tokens[0]!r}) at byte 0")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DatasetError(path, f"bad header before byte {pos}") from None
    if not 0 < maxval < 256:
        raise DatasetError(path, f"only 8-bit PGM supported (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    raw = data[pos:pos + width * height]
    if len(raw) != width * height:
        raise DatasetError(path, f"expected {width * height} pixel bytes at byte {pos}, got {len(raw)}")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
    return img.astype(float) / maxval


def write_pgm(path, image):
    """Write an image with values in [0, 1] as 8-bit P5 PGM."""
    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _read_vector(path):
    try:
        return np.loadtxt(str(path), delimiter=",", ndmin=1).ravel()
    except (OSError, ValueError) as exc:
        raise DatasetError(path, str(exc)) from exc


def load_dataset(path, format, n_features=None):
    """Read a data file; ``format`` is one of libsvm, matrixmarket, csv, pgm."""
    if format == "libsvm":
        X, y = read_libsvm(path, n_features)
        return DataBundle("libsvm", A=SparseOperator(X), b=y, shape=X.shape)
    if format == "matrixmarket":
        try:
            A = read_matrix_market(path)
        except (OSError, ValueError) as exc:
            raise DatasetError(path, str(exc)) from exc
        return DataBundle("matrixmarket", A=A, shape=A.shape)
    if format == "csv":
        try:
            A = read_dense_csv(path)
        except (OSError, ValueError) as exc:
            raise DatasetError(path, str(exc)) from exc
        return DataBundle("csv", A=A, shape=A.shape)
    if format == "pgm":
        img = read_pgm(path)
        return DataBundle("pgm", image=img, shape=img.shape)
    raise ValueError(f"unknown data format {format!r}; expected libsvm, matrixmarket, csv or pgm")


# ---------------------------------------------------------------------------
# problem spec files

_SPEC_FLOATS = {"lambda_fraction", "lam", "noise", "density", "observed", "blur_sigma"}
_SPEC_INTS = {"m", "n", "nnz", "seed", "n_blocks", "block_size", "active_blocks", "rows", "cols",
              "rank", "blur_size", "levels", "n_features"}
_SPEC_BOOLS = {"normalize"}


@dataclass
class ProblemSpec:
    """Problem description: a family plus either a data file or generator parameters.

    Spec files are flat ``key = value`` text with ``#`` comments.  Keys
    ``family``, ``data``, ``format``, ``target``, ``lambda_fraction``, ``lam``
    and ``seed`` are common; any other key is passed to the generator.
    """

    family: str
    data: str | None = None
    format: str | None = None
    target: str | None = None
    lambda_fraction: float = 0.1
    lam: float | None = None
    seed: int = 0
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text, source="<spec>"):
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise DatasetError(source, f"expected key = value, got {line!r}", lineno)
            key, val = key.strip(), val.strip()
            try:
                if key in _SPEC_FLOATS:
                    values[key] = float(val)
                elif key in _SPEC_INTS:
                    values[key] = int(val)
                elif key in _SPEC_BOOLS:
                    values[key] = val.lower() in ("1", "true", "yes")
                else:
                    values[key] = val
            except ValueError:
                raise DatasetError(source, f"bad value for {key}: {val!r}", lineno) from None
        return cls.from_dict(values, source)

    @classmethod
    def from_dict(cls, values, source="<spec>"):
        values = dict(values)
        family = values.pop("family", None)
        if family not in FAMILIES:
            raise DatasetError(source, f"family must be one of {FAMILIES}, got {family!r}")
        common = {k: values.pop(k) for k in ("data", "format", "target", "lambda_fraction",
                                              "lam", "seed") if k in values}
        return cls(family=family, params=values, **common)

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DatasetError(path, f"cannot open: {exc.strerror}") from exc
        spec = cls.parse(text, str(path))
        base = Path(path).parent
        for attr in ("data", "target"):
            val = getattr(spec, attr)
            if val is not None and not Path(val).is_absolute():
                setattr(spec, attr, str(base / val))
        return spec

    def to_text(self):
        lines = [f"family = {self.family}"]
        for key in ("data", "format", "target", "lam"):
            if getattr(self, key) is not None:
                lines.append(f"{key} = {getattr(self, key)}")
        lines.append(f"lambda_fraction = {self.lambda_fraction!r}")
        lines.append(f"seed = {self.seed}")
        lines.extend(f"{k} = {v}" for k, v in self.params.items())
        return "\n".join(lines) + "\n"


def build_problem(spec):
    """Build ``(problem, metadata)`` from a :class:`ProblemSpec`; ``lam`` is resolved."""
    if spec.data is None:
        params = dict(spec.params, lambda_fraction=spec.lambda_fraction)
        if spec.lam is not None:
            params["lam"] = spec.lam
        return gen_synthetic(spec.family, params, spec.seed)

    fmt = spec.format or _guess_format(spec.data)
    fam = spec.family
    meta = {"family": fam, "data": spec.data, "format": fmt}
    if fam == "imrestore":
        img = load_dataset(spec.data, "pgm").image
        p = spec.params
        problem = build_imrestore(img, int(p.get("blur_size", 9)), float(p.get("blur_sigma", 4.0)),
                                  float(p.get("noise", 1e-3)),
                                  spec.lam if spec.lam is not None else 1e-4,
                                  int(p.get("levels", 4)), spec.seed)
    elif fam == "matcomp":
        rows, cols = spec.params.get("rows"), spec.params.get("cols")
        if rows is None or cols is None:
            raise DatasetError(spec.data, "matcomp needs rows and cols")
        try:
            entries = np.loadtxt(spec.data, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise DatasetError(spec.data, str(exc)) from exc
        ij = entries[:, :2].astype(int)
        if ij.min() < 0 or ij[:, 0].max() >= rows or ij[:, 1].max() >= cols:
            raise DatasetError(spec.data, "entry index out of bounds")
        problem = build_matcomp(rows, cols, ij, entries[:, 2], spec.lam, spec.lambda_fraction,
                                spec.params.get("svd_policy", "full"))
    else:
        bundle = load_dataset(spec.data, fmt, spec.params.get("n_features"))
        b = bundle.b
        if spec.target is not None:
            b = _read_vector(spec.target)
        if b is None:
            raise DatasetError(spec.data, "no target vector: set target = <file>")
        if fam == "lasso":
            problem = build_lasso(bundle.A, b, spec.lam, spec.lambda_fraction)
        elif fam == "logreg":
            problem = build_logreg(bundle.A, b, spec.lam, spec.lambda_fraction)
        else:
            size = spec.params.get("block_size")
            if size is None or bundle.A.input_dim % int(size):
                raise DatasetError(spec.data, "group-lasso needs block_size dividing n")
            blocks = [int(size)] * (bundle.A.input_dim // int(size))
            problem = build_group_lasso(bundle.A, b, blocks, spec.lam, spec.lambda_fraction)
    meta["lam"] = problem.meta["lam"]
    meta["lambda_max"] = problem.meta.get("lambda_max")
    return problem, meta


def _guess_format(path):
    suffix = Path(path).suffix.lower()
    return {".mtx": "matrixmarket", ".csv": "csv", ".pgm": "pgm"}.get(suffix, "libsvm")
