"""scikit-learn wrappers around the solver for the three linear-model families.

The estimators fit without an intercept, matching the underlying problems.
``alpha`` is the absolute regularization weight; when it is ``None`` the
weight is ``alpha_fraction * lambda_max`` for the training data.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted, validate_data

from .linops import DenseOperator, SparseOperator
from .problems import build_group_lasso, build_lasso, build_logreg
from .solver import preset, solve

__all__ = ["FBLasso", "FBSparseLogisticRegression", "FBGroupLasso"]


def _operator(X):
    return SparseOperator(X.tocsr()) if sp.issparse(X) else DenseOperator(X)


class _FBLinearModel(BaseEstimator):
    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.sparse = True
        return tags

    def _solve(self, problem):
        params = preset(self.solver, problem.lipschitz, tol_abs=self.tol, max_iters=self.max_iter)
        coef, trace = solve(problem, params)
        self.coef_ = coef
        self.alpha_ = problem.meta["lam"]
        self.n_iter_ = trace.iterations
        self.status_ = trace.status
        self.trace_ = trace
        return self


class FBLasso(RegressorMixin, _FBLinearModel):
    """Lasso, ``1/2 ||X w - y||^2 + alpha ||w||_1``.

    Parameters
    ----------
    alpha : float or None
        Regularization weight.
    alpha_fraction : float
        Used when ``alpha`` is None: weight is this fraction of the smallest
        weight that makes ``w = 0`` optimal.
    solver : str
        Solver preset name.
    tol : float
        Residual tolerance.
    max_iter : int
    """

    def __init__(self, alpha=None, alpha_fraction=0.1, solver="alg2-lbfgs", tol=1e-8, max_iter=5000):
        self.alpha = alpha
        self.alpha_fraction = alpha_fraction
        self.solver = solver
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = validate_data(self, X, y, accept_sparse="csr", y_numeric=True, dtype=np.float64)
        return self._solve(build_lasso(_operator(X), y, self.alpha, self.alpha_fraction))

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, accept_sparse="csr", reset=False, dtype=np.float64)
        return X @ self.coef_


class FBGroupLasso(RegressorMixin, _FBLinearModel):
    """Group lasso, ``1/2 ||X w - y||^2 + alpha sum_i ||w_i||_2``.

    ``groups`` lists block sizes (consecutive columns) or index arrays.
    """

    def __init__(self, groups=None, alpha=None, alpha_fraction=0.1, solver="alg2-lbfgs", tol=1e-8,
                 max_iter=5000):
        self.groups = groups
        self.alpha = alpha
        self.alpha_fraction = alpha_fraction
        self.solver = solver
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = validate_data(self, X, y, accept_sparse="csr", y_numeric=True, dtype=np.float64)
        groups = self.groups if self.groups is not None else [1] * X.shape[1]
        return self._solve(build_group_lasso(_operator(X), y, groups, self.alpha, self.alpha_fraction))

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, accept_sparse="csr", reset=False, dtype=np.float64)
        return X @ self.coef_


class FBSparseLogisticRegression(ClassifierMixin, _FBLinearModel):
    """Binary logistic regression with an l1 penalty.

    The two classes found in ``y`` are mapped to -1 and +1 in sorted order.
    """

    def __init__(self, alpha=None, alpha_fraction=0.1, solver="alg2-lbfgs", tol=1e-8, max_iter=5000):
        self.alpha = alpha
        self.alpha_fraction = alpha_fraction
        self.solver = solver
        self.tol = tol
        self.max_iter = max_iter

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.classifier_tags.multi_class = False
        return tags

    def fit(self, X, y):
        X, y = validate_data(self, X, y, accept_sparse="csr", dtype=np.float64)
        self.classes_ = unique_labels(y)
        if self.classes_.size != 2:
            raise ValueError(f"Only binary classification is supported; got {self.classes_.size} classes")
        signs = np.where(y == self.classes_[1], 1.0, -1.0)
        return self._solve(build_logreg(_operator(X), signs, self.alpha, self.alpha_fraction))

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, accept_sparse="csr", reset=False, dtype=np.float64)
        return X @ self.coef_

    def predict_proba(self, X):
        z = self.decision_function(X)
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores > 0).astype(int)]

