"""Distance-based testing: lineups, null quantiles, bootstrap, MVI, power curves and PCA.

An *estimator* here is any callable ``estimator(residuals, fitted) -> float``.
If it also has a ``batch(residual_list, fitted_list)`` method that is used to
score many plots at once.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateFeatures, DegenerateInput, EmptyInput, EmptyNulls, RankDeficient
from .regression import FittedLinearModel, RegressionData, fit_ols, generate_null_residuals

Estimator = Callable[[np.ndarray, np.ndarray], float]

LINEUP_M = 20
ALPHA = 0.05
MVI_C = 10.0
POWER_OFFSET = math.log(0.05 / 0.95)
SEPARATION_BETA = 50.0
DEFAULT_N_GRID = tuple(range(50, 501, 50))
DEFAULT_NULL_COUNT = 200
MIN_NULL_COUNT = 100
BOOTSTRAP_REDRAWS = 10


def score_plots(estimator: Estimator, residual_list, fitted_list) -> np.ndarray:
    batch = getattr(estimator, "batch", None)
    if batch is not None:
        return np.asarray(batch(residual_list, fitted_list), dtype=float)
    return np.array([float(estimator(r, f)) for r, f in zip(residual_list, fitted_list)])


# -- quantiles and lineups ---------------------------------------------------

def empirical_quantile(values, q):
    """Type-7 sample quantile (linear interpolation between order statistics)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyInput("empirical_quantile needs at least one value")
    qa = np.asarray(q, dtype=float)
    if np.any((qa < 0) | (qa > 1)) or np.any(np.isnan(qa)):
        raise ValueError("quantile level must lie in [0, 1]")
    out = np.quantile(v, qa, method="linear")
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class LineupResult:
    d_hat_true: float
    d_hat_nulls: np.ndarray
    p_value: float
    reject_at_95: bool
    q95_null: float

    @property
    def lineup_m(self) -> int:
        return self.d_hat_nulls.size + 1


def lineup_test(d_hat_true: float, d_hat_nulls) -> LineupResult:
    """p = (1 + #{null >= true}) / m with m = number of nulls + 1.

    Rejection at the 5% level is ``p <= 0.05``, which for ``m = 20`` is the
    rule "the true plot strictly exceeds every null".
    """
    nulls = np.asarray(d_hat_nulls, dtype=float).ravel()
    if nulls.size == 0:
        raise EmptyNulls("a lineup needs at least one null plot")
    m = nulls.size + 1
    p = (1 + int(np.sum(nulls >= d_hat_true))) / m
    return LineupResult(float(d_hat_true), nulls, p, bool(p <= ALPHA + 1e-12), empirical_quantile(nulls, 0.95))


def delta_adjusted(d_hat_true: float, d_hat_nulls) -> float:
    nulls = np.asarray(d_hat_nulls, dtype=float).ravel()
    if nulls.size == 0:
        raise EmptyNulls("delta_adjusted needs at least one null distance")
    return float(d_hat_true - nulls.max())


def null_residual_sets(model: FittedLinearModel, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    return [generate_null_residuals(model, rng) for _ in range(count)]


def run_lineup(model: FittedLinearModel, estimator: Estimator, rng: np.random.Generator,
               lineup_m: int = LINEUP_M) -> tuple[LineupResult, list[np.ndarray]]:
    """Score the fitted model's plot against ``lineup_m - 1`` rotation nulls."""
    nulls = null_residual_sets(model, lineup_m - 1, rng)
    scores = score_plots(estimator, [model.residuals] + nulls, [model.fitted] * lineup_m)
    return lineup_test(scores[0], scores[1:]), nulls


# -- quantile lattice ---------------------------------------------------------

def default_null_template(n: int, rng: np.random.Generator) -> RegressionData:
    """Correctly specified simple regression ``y = 1 + x + e`` with standard normal x and e."""
    x = rng.normal(size=n)
    return RegressionData(np.column_stack([np.ones(n), x]), 1.0 + x + rng.normal(size=n))


@dataclass
class QuantileLattice:
    """Null quantiles per sample size; ``values[i]`` holds the levels ``q_levels`` for ``n_grid[i]``."""

    n_grid: np.ndarray
    q_levels: np.ndarray
    values: np.ndarray
    null_count: int

    def __post_init__(self):
        if self.null_count < MIN_NULL_COUNT:
            raise ValueError(f"null_count must be >= {MIN_NULL_COUNT}")
        if np.any(np.diff(self.values, axis=1) < 0):
            raise ValueError("quantiles must be non-decreasing in q")

    def row(self, n: int) -> np.ndarray:
        return self.values[int(np.argmin(np.abs(self.n_grid - n)))]

    def lookup_p_value(self, d_hat: float, n: int) -> float:
        """Upper-tail probability of ``d_hat`` at the grid size nearest ``n``.

        The stored quantile curve is inverted by linear interpolation (ties take
        the highest level, giving a right-continuous CDF) and the tail
        probability is clamped to ``[1/null_count, 1]``.
        """
        vals = self.row(n)
        rev_vals = vals[::-1]
        uniq, first_in_rev = np.unique(rev_vals, return_index=True)
        levels = self.q_levels[::-1][first_in_rev]
        if d_hat < uniq[0]:
            cdf = 0.0
        else:
            cdf = float(np.interp(d_hat, uniq, levels))
        return float(min(1.0, max(1.0 / self.null_count, 1.0 - cdf)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "q_level", "value", "null_count"])
            for n, row in zip(self.n_grid, self.values):
                for q, v in zip(self.q_levels, row):
                    w.writerow([int(n), repr(float(q)), repr(float(v)), self.null_count])

    @classmethod
    def from_csv(cls, path) -> "QuantileLattice":
        cells: dict[int, list[tuple[float, float]]] = {}
        counts = set()
        with open(Path(path), newline="") as fh:
            for row in csv.DictReader(fh):
                cells.setdefault(int(row["n"]), []).append((float(row["q_level"]), float(row["value"])))
                counts.add(int(row["null_count"]))
        if not cells or len(counts) != 1:
            raise ValueError("lattice CSV must be non-empty with a single null_count")
        grid = sorted(cells)
        levels = np.array([q for q, _ in sorted(cells[grid[0]])])
        values = np.array([[v for _, v in sorted(cells[n])] for n in grid])
        return cls(np.array(grid), levels, values, counts.pop())


def build_quantile_lattice(
    estimator: Estimator,
    template: Callable[[int, np.random.Generator], RegressionData] = default_null_template,
    n_grid: Sequence[int] = DEFAULT_N_GRID,
    null_count: int = DEFAULT_NULL_COUNT,
    rng: np.random.Generator | None = None,
) -> QuantileLattice:
    """Estimate distances of ``null_count`` correctly specified fits per grid size.

    Stored levels are ``k / (null_count - 1)``, so each row is the sorted null
    sample itself and type-7 quantiles at any level follow by interpolation.
    """
    if null_count < MIN_NULL_COUNT:
        raise ValueError(f"null_count must be >= {MIN_NULL_COUNT}")
    rng = rng if rng is not None else np.random.default_rng()
    levels = np.arange(null_count) / (null_count - 1)
    rows = []
    for n in n_grid:
        res, fit = [], []
        for _ in range(null_count):
            model = fit_ols(template(int(n), rng))
            res.append(model.residuals)
            fit.append(model.fitted)
        d = score_plots(estimator, res, fit)
        rows.append(empirical_quantile(d, levels))
    return QuantileLattice(np.asarray(n_grid, dtype=int), levels, np.array(rows), null_count)


# -- bootstrap -----------------------------------------------------------------

@dataclass(frozen=True)
class BootstrapResult:
    d_hat_boot: np.ndarray
    rejection_ratio: float
    q_used: float


def bootstrap_assess(data: RegressionData, estimator: Estimator, n_boot: int, q_null_95: float,
                     rng: np.random.Generator) -> BootstrapResult:
    """Case-resampling bootstrap of D-hat compared against one null quantile."""
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    res, fit = [], []
    for _ in range(n_boot):
        for attempt in range(BOOTSTRAP_REDRAWS + 1):
            idx = rng.integers(0, data.n, data.n)
            try:
                model = fit_ols(RegressionData(data.X[idx], data.y[idx]))
                break
            except RankDeficient:
                if attempt == BOOTSTRAP_REDRAWS:
                    raise
        res.append(model.residuals)
        fit.append(model.fitted)
    d = score_plots(estimator, res, fit)
    return BootstrapResult(d, float(np.mean(d >= q_null_95)), float(q_null_95))


# -- MVI -------------------------------------------------------------------------

@dataclass(frozen=True)
class MviResult:
    mvi: float
    category: str
    c_const: float = MVI_C


def mvi_category(value: float) -> str:
    """Strong for >= 8, Moderate for [6, 8), Weak below 6."""
    if value >= 8.0:
        return "Strong"
    if value >= 6.0:
        return "Moderate"
    return "Weak"


def mvi(d_hat: float, n: int, c: float = MVI_C) -> MviResult:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not d_hat >= 0:
        raise ValueError("d_hat must be non-negative")
    value = c + d_hat - math.log(n)
    return MviResult(value, mvi_category(value), c)


# -- power curve -------------------------------------------------------------------

@dataclass(frozen=True)
class PowerCurveFit:
    beta: float
    separated: bool
    converged: bool
    iterations: int
    offset: float = POWER_OFFSET

    def probability(self, d):
        return _logistic(self.beta * np.asarray(d, dtype=float) + self.offset)


def _logistic(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def _loglik(beta, d, y, offset):
    eta = beta * d + offset
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_power_curve(distances, rejections, max_iter: int = 200) -> PowerCurveFit:
    """ML slope of ``P(reject | D) = logistic(beta D + log(0.05/0.95))``.

    Newton-Raphson with step halving.  When D perfectly separates the two
    outcome classes, or the slope passes 50 in magnitude, the fit is returned
    with ``separated=True`` instead of raising.
    """
    d = np.asarray(distances, dtype=float).ravel()
    y = np.asarray(rejections, dtype=float).ravel()
    if d.size != y.size or d.size < 2:
        raise DegenerateInput("need at least two paired observations")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise DegenerateInput("both outcome classes must be present")
    pos, neg = d[y == 1], d[y == 0]
    separated = bool(pos.min() > neg.max() or neg.min() > pos.max())
    offset = POWER_OFFSET
    beta, converged, it = 0.0, False, 0
    ll = _loglik(beta, d, y, offset)
    for it in range(1, max_iter + 1):
        p = _logistic(beta * d + offset)
        grad = float(np.sum(d * (y - p)))
        if abs(grad) < 1e-10:
            converged = True
            break
        info = float(np.sum(d * d * p * (1.0 - p)))
        step = grad / info if info > 0 else math.copysign(1.0, grad)
        for _ in range(60):
            cand = beta + step
            cand_ll = _loglik(cand, d, y, offset)
            if cand_ll >= ll:
                break
            step *= 0.5
        beta, ll = cand, cand_ll
        if abs(beta) > SEPARATION_BETA:
            separated = True
            break
    return PowerCurveFit(beta, separated, converged, it, offset)


# -- PCA ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaResult:
    scores: np.ndarray  # (examples, 2)
    components: np.ndarray  # (2, dims), unit rows
    variances: np.ndarray  # eigenvalues of the top two components
    mean: np.ndarray


def pca_project(features) -> PcaResult:
    """Scores on the first two principal components of the column-centred features."""
    F = np.asarray(features, dtype=float)
    if F.ndim != 2 or F.shape[0] < 3:
        raise DegenerateInput("need a matrix with at least three rows")
    mean = F.mean(axis=0)
    C = F - mean
    cov = C.T @ C / (F.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[0] <= 1e-12 * max(1.0, float(np.abs(F).max()) ** 2):
        raise DegenerateFeatures("feature covariance has rank 0")
    k = min(2, evecs.shape[1])
    comps = evecs[:, :k].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    if k < 2:
        comps = np.vstack([comps, np.zeros_like(comps)])
        evals = np.concatenate([evals, [0.0]])
    return PcaResult(C @ comps.T, comps, np.maximum(evals[:2], 0.0), mean)
