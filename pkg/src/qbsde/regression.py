"""Least-squares projection onto a polynomial basis in the Brownian state.

The regressor is the numerical stand-in for a conditional expectation
given the Brownian position at a grid time.  The default basis is the
probabilists' Hermite family with inputs scaled by ``sqrt(t)``, orthogonal
under the Gaussian marginal of ``B_t``, which keeps the normal equations
well conditioned.  A cubic spline basis on quantile knots (piecewise
polynomials, additive across coordinates) is available for targets with
kinks that a global polynomial cannot follow.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.preprocessing import SplineTransformer
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InvalidArgumentError, SingularSystemError


@dataclass(frozen=True)
class RegressionSpec:
    """Basis and regularisation for conditional-expectation regressions."""

    degree: int = 4
    ridge: float = 1e-8
    clip_box: tuple[float, float] | None = None
    basis: str = "hermite"
    n_knots: int = 12
    payoff_features: bool = False

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 0:
            raise InvalidArgumentError("degree must be a nonnegative integer")
        if not self.ridge >= 0:
            raise InvalidArgumentError("ridge must be nonnegative")
        if self.basis not in ("hermite", "spline"):
            raise InvalidArgumentError(f"unsupported basis {self.basis!r}")
        if self.basis == "spline" and self.n_knots < 2:
            raise InvalidArgumentError("spline basis needs at least 2 knots")
        if self.clip_box is not None and self.clip_box[0] > self.clip_box[1]:
            raise InvalidArgumentError("clip_box must satisfy lo <= hi")


def hermite_e(u, degree):
    """Columns ``He_0(u) .. He_degree(u)`` for a 1-D array ``u``."""
    out = np.empty((u.shape[0], degree + 1))
    out[:, 0] = 1.0
    if degree >= 1:
        out[:, 1] = u
    for k in range(1, degree):
        out[:, k + 1] = u * out[:, k] - k * out[:, k - 1]
    return out


def multi_indices(d, degree):
    """Exponent tuples of total degree <= ``degree`` in ``d`` variables, constant first."""
    idx = [a for a in itertools.product(range(degree + 1), repeat=d) if sum(a) <= degree]
    return sorted(idx, key=lambda a: (sum(a), tuple(-x for x in a)))


def design_matrix(X, degree, scale):
    """Tensor Hermite design for states ``X`` of shape ``(M, d)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if scale <= 0:
        return np.ones((X.shape[0], 1))
    per_dim = [hermite_e(X[:, j] / scale, degree) for j in range(X.shape[1])]
    cols = []
    for a in multi_indices(X.shape[1], degree):
        c = np.ones(X.shape[0])
        for j, k in enumerate(a):
            if k:
                c = c * per_dim[j][:, k]
        cols.append(c)
    return np.column_stack(cols)


class HermiteRegression(RegressorMixin, BaseEstimator):
    """Ridge least squares on a scaled Hermite basis.

    Parameters
    ----------
    degree : int
        Maximal total degree of the basis.
    ridge : float
        Penalty on every coefficient except the constant one, relative to
        the sample-averaged Gram matrix.  ``ridge=0`` gives plain least
        squares and raises on a rank-deficient design.
    scale : float
        States are divided by ``scale`` before the basis is evaluated.  A
        nonpositive scale collapses the basis to the constant.
    clip : tuple or None
        Predictions are clamped into ``[lo, hi]`` when given.
    extra : callable or None
        ``extra(X)`` returns additional columns appended to the design.
    """

    def __init__(self, degree=4, ridge=1e-8, scale=1.0, clip=None, extra=None):
        self.degree = degree
        self.ridge = ridge
        self.scale = scale
        self.clip = clip
        self.extra = extra

    def _design(self, X):
        A = design_matrix(X, self.degree, self.scale)
        return _with_extra(A, X, self.extra)

    def fit(self, X, y):
        X = check_array(X, ensure_2d=False, ensure_all_finite=True)
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise InvalidArgumentError("targets must be a 1-D array matching the states")
        if not np.all(np.isfinite(y)):
            raise InvalidArgumentError("targets contain non-finite values")
        if X.ndim == 1:
            X = X[:, None]
        coef = _ridge_solve(self._design(X), y, self.ridge)
        self.coef_ = coef
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        out = self._design(X) @ self.coef_
        if self.clip is not None:
            out = np.clip(out, self.clip[0], self.clip[1])
        return out


def _with_extra(A, X, extra):
    if extra is None or A.shape[1] == 1:
        return A
    return np.column_stack([A, extra(X)])


def _ridge_solve(A, y, ridge):
    """Least squares with ``ridge`` on every column but the first (the constant)."""
    M, p = A.shape
    if M <= p:
        raise InvalidArgumentError(f"need more samples ({M}) than basis functions ({p})")
    if p == 1:
        return np.array([np.mean(y)])
    if ridge == 0:
        coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
        if rank < p:
            raise SingularSystemError(f"design has rank {rank} < {p} and ridge is 0")
        return coef
    G = A.T @ A / M
    G[1:, 1:] += ridge * np.eye(p - 1)
    try:
        return np.linalg.solve(G, A.T @ y / M)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc


class SplineRegression(RegressorMixin, BaseEstimator):
    """Ridge least squares on cubic B-splines with knots at sample quantiles.

    The design is a constant column followed by the spline columns of each
    coordinate with one column dropped per coordinate, so the intercept is
    unpenalised and the design has full rank.  Outside the data range the
    fit extrapolates linearly.  ``extra`` works as for
    :class:`HermiteRegression`.
    """

    def __init__(self, n_knots=12, ridge=1e-8, clip=None, constant=False, extra=None):
        self.n_knots = n_knots
        self.ridge = ridge
        self.clip = clip
        self.constant = constant
        self.extra = extra

    def _design(self, X):
        if self.constant:
            return np.ones((X.shape[0], 1))
        S = self.spline_.transform(X)
        k = S.shape[1] // X.shape[1]
        keep = np.ones(S.shape[1], dtype=bool)
        keep[::k] = False
        return _with_extra(np.column_stack([np.ones(X.shape[0]), S[:, keep]]), X, self.extra)

    def fit(self, X, y):
        X = check_array(X, ensure_2d=False, ensure_all_finite=True)
        y = np.asarray(y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise InvalidArgumentError("targets must be a 1-D array matching the states")
        if not np.all(np.isfinite(y)):
            raise InvalidArgumentError("targets contain non-finite values")
        if not self.constant:
            self.spline_ = SplineTransformer(n_knots=self.n_knots, degree=3, knots="quantile",
                                             extrapolation="linear").fit(X)
        self.coef_ = _ridge_solve(self._design(X), y, self.ridge)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        out = self._design(X) @ self.coef_
        if self.clip is not None:
            out = np.clip(out, self.clip[0], self.clip[1])
        return out


def regressor_for(spec: RegressionSpec, scale: float, extra=None):
    """A fresh regressor for a state with spread ``scale`` (``0`` means a deterministic state)."""
    if spec.basis == "spline":
        return SplineRegression(spec.n_knots, spec.ridge, spec.clip_box, constant=not scale > 0,
                                extra=extra)
    degree = spec.degree if scale > 0 else 0
    return HermiteRegression(degree=degree, ridge=spec.ridge, scale=scale, clip=spec.clip_box,
                             extra=extra)


def regress_conditional_expectation(targets, state, spec: RegressionSpec = RegressionSpec(),
                                    scale=None):
    """Fitted values of the projection of ``targets`` onto the basis at ``state``.

    ``scale`` defaults to the sample standard deviation of the state; for a
    Brownian state at time ``t`` pass ``sqrt(t)``.
    """
    state = np.asarray(state, dtype=float)
    if state.ndim == 1:
        state = state[:, None]
    if scale is None:
        scale = float(np.sqrt(np.mean(np.var(state, axis=0))))
    reg = regressor_for(spec, scale)
    return reg.fit(state, targets).predict(state)
