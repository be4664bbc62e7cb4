"""Auxiliary scatter-plot measures fed to the network next to the image.

Definitions (all in [0, 1], computed on the residuals-vs-fitted scatter):

monotonic
    squared Spearman rank correlation, average ranks for ties.
sparse
    90th percentile of Euclidean MST edge lengths after scaling both axes to
    the unit square and dropping coincident points, capped at 1.
splines
    ``1 - SSE/SST`` of a natural cubic regression spline of residuals on
    fitted values with interior knots at the 0.2, 0.4, 0.6, 0.8 quantiles.
striped
    ``1 - (#distinct fitted values) / n``.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateInput

SPLINE_KNOT_LEVELS = (0.2, 0.4, 0.6, 0.8)
N_SCALE = 500.0


@dataclass(frozen=True)
class AuxFeatures:
    monotonic: float
    sparse: float
    splines: float
    striped: float
    n_obs: int

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    def network_input(self) -> np.ndarray:
        """The four measures unchanged plus ``log(n) / log(500)``."""
        return np.array(
            [self.monotonic, self.sparse, self.splines, self.striped,
             np.log(self.n_obs) / np.log(N_SCALE)]
        )


def euclidean_mst(points) -> list[tuple[int, int, float]]:
    """Prim's algorithm on the complete Euclidean graph.

    Points are visited in lexicographic order and ties in edge length are
    broken towards the lexicographically smallest endpoint, so the tree is
    deterministic.  Returns ``(i, j, length)`` with indices into ``points``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must have shape (n, 2)")
    uniq = np.unique(pts, axis=0)
    if uniq.shape[0] < 2 or uniq.shape[0] != pts.shape[0]:
        raise DegenerateInput("MST needs at least two distinct points and no duplicates")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    p = pts[order]
    n = p.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = np.sqrt(np.sum((p - p[0]) ** 2, axis=1))
    parent = np.zeros(n, dtype=int)
    best[0] = np.inf
    edges = []
    for _ in range(n - 1):
        # argmin returns the first (lexicographically smallest) minimiser
        v = int(np.argmin(best))
        edges.append((int(order[parent[v]]), int(order[v]), float(best[v])))
        in_tree[v] = True
        best[v] = np.inf
        d = np.sqrt(np.sum((p - p[v]) ** 2, axis=1))
        closer = (~in_tree) & (d < best)
        best[closer] = d[closer]
        parent[closer] = v
    return edges


def _unit(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def monotonic(x: np.ndarray, y: np.ndarray) -> float:
    rx, ry = rankdata(x), rankdata(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0 or sy == 0:
        return 0.0
    rho = np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy)
    return float(min(rho * rho, 1.0))


def sparse(x: np.ndarray, y: np.ndarray) -> float:
    pts = np.unique(np.column_stack([_unit(x), _unit(y)]), axis=0)
    if pts.shape[0] < 2:
        raise DegenerateInput("all points coincide")
    lengths = np.array([e[2] for e in euclidean_mst(pts)])
    return float(min(1.0, np.quantile(lengths, 0.9)))


def natural_spline_basis(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Truncated-power natural cubic spline basis with ``len(knots)`` columns."""
    K = knots.size
    cols = [np.ones_like(x), x]
    if K >= 3:
        def d(k):
            return (np.maximum(x - knots[k], 0) ** 3 - np.maximum(x - knots[-1], 0) ** 3) / (knots[-1] - knots[k])
        last = d(K - 2)
        cols += [d(k) - last for k in range(K - 2)]
    return np.column_stack(cols)


def splines(x: np.ndarray, y: np.ndarray) -> float:
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        return 0.0
    lo, hi = x.min(), x.max()
    if hi == lo:
        return 0.0
    # unit scaling keeps the basis well conditioned and the fit affine invariant
    u = (x - lo) / (hi - lo)
    interior = np.quantile(u, SPLINE_KNOT_LEVELS)
    knots = np.unique(np.concatenate([[0.0], interior, [1.0]]))
    basis = natural_spline_basis(u, knots)
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    resid = y - basis @ coef
    sse = float(resid @ resid)
    if sse <= 1e-12 * sst:
        return 1.0
    return float(min(1.0, max(0.0, 1.0 - sse / sst)))


def striped(x: np.ndarray) -> float:
    return float(1.0 - np.unique(x).size / x.size)


def compute_aux(residuals, fitted) -> AuxFeatures:
    e = np.asarray(residuals, dtype=float).ravel()
    f = np.asarray(fitted, dtype=float).ravel()
    if e.size != f.size:
        raise ValueError("residuals and fitted values differ in length")
    if e.size < 3:
        raise DegenerateInput("need at least three points")
    if np.all(e == e[0]) and np.all(f == f[0]):
        raise DegenerateInput("all points coincide")
    return AuxFeatures(
        monotonic=monotonic(f, e),
        sparse=sparse(f, e),
        splines=splines(f, e),
        striped=striped(f),
        n_obs=int(e.size),
    )
