"""Synthetic data generating process, distance labels and balanced datasets.

The response is

    y = 1 + x1 + beta1 x2 + beta2 (z + beta1 w) + k * eps
    z = He_j(g(x1, 2)),  w = He_j(g(x2, 2))
    k = sqrt(1 + b (2 - |a|) (x1 + beta1 x2 - a)^2)

and the fitted model regresses ``y`` on an intercept, ``x1`` and (when
``beta1 = 1``) ``x2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .distance import (
    DEFAULT_MC_SETS,
    DistanceResult,
    NormalViolationSpec,
    kl_nonnormal_mc,
    kl_normal,
    simulate_residual_matrix,
)
from .errors import ConstantVector, RankDeficient
from .regression import FittedLinearModel, RegressionData, fit_ols

DISTRIBUTIONS = ("discrete", "uniform", "normal", "lognormal")
N_BUCKETS = 50
BUCKET_TOP = 7.0
MAX_RETRIES = 10

# lognormal with unit log-scale, centred and standardised
_LN_MEAN = math.exp(0.5)
_LN_SD = math.sqrt((math.e - 1.0) * math.e)


@dataclass(frozen=True)
class DgpSpec:
    j: int
    a: float
    b: float
    beta1: int
    beta2: int
    dist_e: str
    dist_x1: str
    dist_x2: str
    sigma_e: float
    sigma_x1: float
    sigma_x2: float
    n: int

    def __post_init__(self):
        problems = []
        if not (2 <= self.j <= 18):
            problems.append(f"j={self.j} not in 2..18")
        if not (-1.0 <= self.a <= 1.0):
            problems.append(f"a={self.a} not in [-1, 1]")
        if not (0.0 <= self.b <= 100.0):
            problems.append(f"b={self.b} not in [0, 100]")
        if self.beta1 not in (0, 1) or self.beta2 not in (0, 1):
            problems.append("beta1 and beta2 must be 0 or 1")
        for name in ("dist_e", "dist_x1", "dist_x2"):
            if getattr(self, name) not in DISTRIBUTIONS:
                problems.append(f"{name}={getattr(self, name)!r} unknown")
        if not (0.0625 <= self.sigma_e <= 9.0):
            problems.append(f"sigma_e={self.sigma_e} not in [0.0625, 9]")
        for name in ("sigma_x1", "sigma_x2"):
            if not (0.3 <= getattr(self, name) <= 0.6):
                problems.append(f"{name}={getattr(self, name)} not in [0.3, 0.6]")
        if not (50 <= self.n <= 500):
            problems.append(f"n={self.n} not in [50, 500]")
        if problems:
            raise ValueError("invalid DgpSpec: " + "; ".join(problems))

    @property
    def correctly_specified(self) -> bool:
        return self.b == 0 and self.beta2 == 0 and self.dist_e == "normal"

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimulatedScenario:
    spec: DgpSpec
    x1: np.ndarray
    x2: np.ndarray
    X: np.ndarray
    y: np.ndarray
    Z: np.ndarray
    mean: np.ndarray  # E[y | x], without the error term
    k_vec: np.ndarray
    model: FittedLinearModel
    label_d: DistanceResult | None = None

    @property
    def residuals(self) -> np.ndarray:
        return self.model.residuals

    @property
    def fitted(self) -> np.ndarray:
        return self.model.fitted


def hermite(j: int, x) -> np.ndarray:
    """Probabilist's Hermite polynomial ``He_j`` by the three-term recurrence."""
    if j < 0:
        raise ValueError("order must be non-negative")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if j == 0:
        return prev
    cur = x.copy()
    for order in range(1, j):
        prev, cur = cur, x * cur - order * prev
    return cur


def scale_support(x, k: float) -> np.ndarray:
    """Affine map sending ``min(x)`` to ``-k`` and ``max(x)`` to ``k``."""
    x = np.asarray(x, dtype=float)
    lo, hi = x.min(), x.max()
    if hi == lo:
        raise ConstantVector("cannot rescale a constant vector")
    out = 2.0 * k * (x - lo) / (hi - lo) - k
    # pin endpoints against rounding
    out[x == lo] = -k
    out[x == hi] = k
    return out


def draw(dist: str, sigma: float, size, rng: np.random.Generator) -> np.ndarray:
    """Mean-zero draws with standard deviation ``sigma`` from a named family."""
    if dist == "normal":
        return rng.normal(0.0, sigma, size)
    if dist == "uniform":
        half = math.sqrt(3.0) * sigma
        return rng.uniform(-half, half, size)
    if dist == "lognormal":
        return (np.exp(rng.normal(0.0, 1.0, size)) - _LN_MEAN) * (sigma / _LN_SD)
    if dist == "discrete":
        delta = sigma / math.sqrt(2.0)
        return delta * (rng.integers(0, 5, size) - 2).astype(float)
    raise ValueError(f"unknown distribution {dist!r}")


def sample_spec(rng: np.random.Generator) -> DgpSpec:
    """Independent uniform draw of every factor over its domain."""
    return DgpSpec(
        j=int(rng.integers(2, 19)),
        a=float(rng.uniform(-1.0, 1.0)),
        b=float(rng.uniform(0.0, 100.0)),
        beta1=int(rng.integers(0, 2)),
        beta2=int(rng.integers(0, 2)),
        dist_e=DISTRIBUTIONS[rng.integers(0, 4)],
        dist_x1=DISTRIBUTIONS[rng.integers(0, 4)],
        dist_x2=DISTRIBUTIONS[rng.integers(0, 4)],
        sigma_e=float(rng.uniform(0.0625, 9.0)),
        sigma_x1=float(rng.uniform(0.3, 0.6)),
        sigma_x2=float(rng.uniform(0.3, 0.6)),
        n=int(rng.integers(50, 501)),
    )


def propose_spec(rng: np.random.Generator) -> DgpSpec:
    """Proposal used when filling distance buckets.

    Starts from :func:`sample_spec` and then tilts three factors so that mild
    violations are proposed often enough to fill the low-distance buckets:
    ``b`` is 0 w.p. 1/4, log-uniform on [0.01, 100] w.p. 1/2 and kept
    uniform otherwise; errors are normal w.p. 1/2; ``sigma_e`` is log-uniform
    w.p. 1/2.  Every proposal stays inside the factor domains.
    """
    spec = sample_spec(rng)
    u = rng.uniform()
    if u < 0.25:
        b = 0.0
    elif u < 0.75:
        b = float(10.0 ** rng.uniform(-2.0, 2.0))
    else:
        b = spec.b
    dist_e = "normal" if rng.uniform() < 0.5 else spec.dist_e
    sigma_e = spec.sigma_e
    if rng.uniform() < 0.5:
        sigma_e = float(np.exp(rng.uniform(np.log(0.0625), np.log(9.0))))
    return replace(spec, b=min(b, 100.0), dist_e=dist_e, sigma_e=min(max(sigma_e, 0.0625), 9.0))


def _design(spec: DgpSpec, rng: np.random.Generator):
    x1 = draw(spec.dist_x1, spec.sigma_x1, spec.n, rng)
    x2 = draw(spec.dist_x2, spec.sigma_x2, spec.n, rng)
    cols = [np.ones(spec.n), x1] + ([x2] if spec.beta1 else [])
    X = np.column_stack(cols)
    z = hermite(spec.j, scale_support(x1, 2.0))
    w = hermite(spec.j, scale_support(x2, 2.0)) if spec.beta1 else np.zeros(spec.n)
    lin = x1 + spec.beta1 * x2
    k_vec = np.sqrt(1.0 + spec.b * (2.0 - abs(spec.a)) * (lin - spec.a) ** 2)
    mean = 1.0 + lin + spec.beta2 * (z + spec.beta1 * w)
    if spec.beta2:
        Z = np.column_stack([z, w]) if spec.beta1 else z[:, None]
    else:
        Z = np.zeros((spec.n, 0))
    return x1, x2, X, Z, mean, k_vec


def simulate_dgp(spec: DgpSpec, rng: np.random.Generator, label_m: int | None = None,
                 label_rng: np.random.Generator | None = None) -> SimulatedScenario:
    """Draw predictors and errors for ``spec`` and fit the (possibly wrong) model.

    Degenerate draws (a constant predictor or a rank-deficient design) are
    redrawn up to 10 times.  Pass ``label_m`` to attach the distance label.
    """
    last_exc: Exception | None = None
    for _ in range(MAX_RETRIES):
        try:
            x1, x2, X, Z, mean, k_vec = _design(spec, rng)
            eps = draw(spec.dist_e, spec.sigma_e, spec.n, rng)
            y = mean + k_vec * eps
            model = fit_ols(RegressionData(X, y))
        except (ConstantVector, RankDeficient) as exc:
            last_exc = exc
            continue
        scen = SimulatedScenario(spec, x1, x2, X, y, Z, mean, k_vec, model)
        if label_m is not None:
            scen.label_d = label_distance(scen, label_m, label_rng if label_rng is not None else rng)
        return scen
    raise ConstantVector(f"degenerate draws persisted after {MAX_RETRIES} retries") from last_exc


def label_distance(scenario: SimulatedScenario, m: int = DEFAULT_MC_SETS,
                   rng: np.random.Generator | None = None, kde: str = "binned") -> DistanceResult:
    """Exact closed form for normal errors, KDE Monte-Carlo otherwise."""
    spec = scenario.spec
    op = scenario.model.operator
    if spec.dist_e == "normal":
        if spec.b == 0:
            V = np.full(spec.n, spec.sigma_e**2)
        else:
            V = scenario.k_vec**2 * spec.sigma_e**2
        beta_z = np.ones(scenario.Z.shape[1])
        return kl_normal(NormalViolationSpec(scenario.Z, beta_z, V), op)
    if rng is None:
        raise ValueError("an rng is required for the Monte-Carlo branch")

    def simulate(r: np.random.Generator, count: int) -> np.ndarray:
        eps = draw(spec.dist_e, spec.sigma_e, (spec.n, count), r)
        return scenario.mean[:, None] + scenario.k_vec[:, None] * eps

    sample = simulate_residual_matrix(simulate, op, m, rng)
    return kl_nonnormal_mc(sample, kde=kde)


def bucket_of(d: float) -> int:
    """1-based bucket index; bucket i holds ``[7(i-1)/49, 7i/49)``, bucket 50 holds ``d >= 7``."""
    if not d >= 0:
        raise ValueError("distance must be non-negative")
    i = min(N_BUCKETS, int(math.floor(d * (N_BUCKETS - 1) / BUCKET_TOP)) + 1)
    # guard the floor against rounding at bucket edges
    while i > 1 and d < bucket_bounds(i)[0]:
        i -= 1
    while i < N_BUCKETS and d >= bucket_bounds(i)[1]:
        i += 1
    return i


def bucket_bounds(i: int) -> tuple[float, float]:
    lo = BUCKET_TOP * (i - 1) / (N_BUCKETS - 1)
    hi = BUCKET_TOP * i / (N_BUCKETS - 1) if i < N_BUCKETS else math.inf
    return lo, hi
