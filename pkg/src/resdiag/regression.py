"""Ordinary least squares, the residual operator, null residuals and baseline tests.

The residual operator ``R = I - X (X'X)^{-1} X'`` is represented through the
thin QR factor ``Q`` of the design, so ``R v = v - Q (Q' v)``.  The explicit
``n x n`` matrix is only built on request and only for ``n <= 2000``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import stats

from .errors import DegenerateModel, DimensionMismatch, RankDeficient

RANK_TOL = 1e-10
MAX_DENSE_N = 2000


@dataclass(frozen=True)
class RegressionData:
    """Design matrix ``X`` (n x k) and response ``y`` (n)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DimensionMismatch(f"X must be 2-D, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"len(y)={y.shape[0]} but X has {X.shape[0]} rows")
        n, k = X.shape
        if k < 1 or n < k:
            raise DimensionMismatch(f"need n >= k >= 1, got n={n}, k={k}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("X and y must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]


class ResidualOperator:
    """Projection onto the orthogonal complement of the column space of ``X``."""

    def __init__(self, q: np.ndarray):
        self.q = q

    @classmethod
    def from_design(cls, X: np.ndarray) -> "ResidualOperator":
        return cls(_orthonormal_basis(np.asarray(X, dtype=float)))

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def k(self) -> int:
        return self.q.shape[1]

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Return ``R @ v`` for a vector or an ``n x m`` matrix."""
        v = np.asarray(v, dtype=float)
        return v - self.q @ (self.q.T @ v)

    def leverage(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.q, self.q)

    def diag(self) -> np.ndarray:
        return 1.0 - self.leverage()

    def matrix(self) -> np.ndarray:
        if self.n > MAX_DENSE_N:
            raise MemoryError(
                f"refusing to materialize a {self.n}x{self.n} residual operator; "
                "use apply() or diag() instead"
            )
        return np.eye(self.n) - self.q @ self.q.T

    def __array__(self, dtype=None, copy=None):
        m = self.matrix()
        return m if dtype is None else m.astype(dtype)


@dataclass
class FittedLinearModel:
    X: np.ndarray
    y: np.ndarray
    beta_hat: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    sigma2_hat: float
    rss: float
    operator: ResidualOperator = field(repr=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @cached_property
    def residual_operator(self) -> np.ndarray:
        return self.operator.matrix()


@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    p_value: float
    df: tuple

    __test__ = False  # not a pytest class


def _orthonormal_basis(X: np.ndarray) -> np.ndarray:
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be 2-D, got shape {X.shape}")
    n, k = X.shape
    if n < k:
        raise RankDeficient(f"{k} columns cannot be independent with {n} rows")
    q, r = np.linalg.qr(X, mode="reduced")
    d = np.abs(np.diag(r))
    if d.size == 0 or d.max() == 0.0 or d.min() < RANK_TOL * d.max():
        raise RankDeficient("design matrix is numerically rank deficient")
    return q


def _qr_solve(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q, r = np.linalg.qr(X, mode="reduced")
    d = np.abs(np.diag(r))
    if d.size == 0 or d.max() == 0.0 or d.min() < RANK_TOL * d.max():
        raise RankDeficient("design matrix is numerically rank deficient")
    beta = np.linalg.solve(r, q.T @ y)
    return beta, q


def fit_ols(data: RegressionData) -> FittedLinearModel:
    """Least squares fit of ``y`` on ``X`` through a QR decomposition.

    Raises RankDeficient when the smallest diagonal entry of the triangular
    factor falls below ``1e-10`` times the largest.
    """
    X, y = data.X, data.y
    beta, q = _qr_solve(X, y)
    fitted = X @ beta
    residuals = y - fitted
    rss = float(residuals @ residuals)
    n, k = X.shape
    sigma2 = rss / (n - k) if n > k else 0.0
    return FittedLinearModel(
        X=X,
        y=y,
        beta_hat=beta,
        fitted=fitted,
        residuals=residuals,
        sigma2_hat=sigma2,
        rss=rss,
        operator=ResidualOperator(q),
    )


def residual_operator(X: np.ndarray) -> np.ndarray:
    """Explicit residual operator ``I - X (X'X)^{-1} X'``."""
    return ResidualOperator.from_design(X).matrix()


def generate_null_residuals(model: FittedLinearModel, rng: np.random.Generator) -> np.ndarray:
    """Draw one set of residuals from the residual rotation distribution.

    Fresh normal noise is projected by the residual operator and rescaled so
    its sum of squares equals the observed RSS.
    """
    n, k = model.n, model.k
    if n <= k:
        raise DegenerateModel("residual space is empty (n == k)")
    eps = rng.normal(0.0, np.sqrt(model.sigma2_hat) if model.sigma2_hat > 0 else 1.0, size=n)
    e = model.operator.apply(eps)
    ss = float(e @ e)
    if model.rss == 0.0 or ss == 0.0:
        return np.zeros(n)
    return e * np.sqrt(model.rss / ss)


def reset_test(model: FittedLinearModel, powers=(2, 3)) -> TestResult:
    """Ramsey RESET: F-test on powers of the fitted values added to the design."""
    n, k = model.n, model.k
    p = len(powers)
    if n <= k + p:
        raise DegenerateModel(f"RESET needs n > k + {p}, got n={n}, k={k}")
    scale = np.max(np.abs(model.fitted))
    if scale == 0.0:
        raise DegenerateModel("fitted values are identically zero")
    f = model.fitted / scale
    Xa = np.column_stack([model.X] + [f**pw for pw in powers])
    try:
        _, qa = _qr_solve(Xa, model.y)
    except RankDeficient as exc:
        raise DegenerateModel("augmented RESET regression is rank deficient") from exc
    ea = model.y - qa @ (qa.T @ model.y)
    rss_u = float(ea @ ea)
    df_resid = n - k - p
    if rss_u <= 0.0:
        stat = np.inf if model.rss > 0 else 0.0
    else:
        stat = ((model.rss - rss_u) / p) / (rss_u / df_resid)
    stat = max(stat, 0.0)
    pval = float(stats.f.sf(stat, p, df_resid)) if np.isfinite(stat) else 0.0
    return TestResult("RESET", float(stat), min(max(pval, 0.0), 1.0), (p, df_resid))


def breusch_pagan_test(model: FittedLinearModel) -> TestResult:
    """Studentized (Koenker) Breusch-Pagan test, ``n R^2`` of e^2 on X."""
    n, k = model.n, model.k
    if n <= k + 1:
        raise DegenerateModel(f"Breusch-Pagan needs n > k + 1, got n={n}, k={k}")
    X = model.X
    has_const = np.any(np.all(X == X[:1], axis=0) & (X[0] != 0))
    Z = X if has_const else np.column_stack([np.ones(n), X])
    df = Z.shape[1] - 1
    if df < 1:
        raise DegenerateModel("Breusch-Pagan needs at least one non-constant regressor")
    u = model.residuals**2
    sst = float(np.sum((u - u.mean()) ** 2))
    # residuals at roundoff level carry no variance information
    noise_floor = (64 * np.finfo(float).eps * max(float(np.linalg.norm(model.y)), 1.0)) ** 2
    if sst == 0.0 or model.rss <= noise_floor:
        return TestResult("Breusch-Pagan", 0.0, 1.0, (df,))
    try:
        _, qz = _qr_solve(Z, u)
    except RankDeficient as exc:
        raise DegenerateModel("auxiliary regression is rank deficient") from exc
    resid = u - qz @ (qz.T @ u)
    r2 = 1.0 - float(resid @ resid) / sst
    stat = max(n * r2, 0.0)
    pval = float(stats.chi2.sf(stat, df))
    return TestResult("Breusch-Pagan", stat, min(max(pval, 0.0), 1.0), (df,))
