import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import pdist, squareform
from scipy.stats import spearmanr

from resdiag.errors import DegenerateInput
from resdiag.scagnostics import (
    AuxFeatures,
    compute_aux,
    euclidean_mst,
    monotonic,
    sparse,
    splines,
    striped,
)


def brute_force_mst_weight(pts):
    n = len(pts)
    D = squareform(pdist(pts))
    best = np.inf
    for edges in itertools.combinations(itertools.combinations(range(n), 2), n - 1):
        parent = list(range(n))

        def find(a):
            while parent[a] != a:
                a = parent[a]
            return a

        ok = True
        for i, j in edges:
            ri, rj = find(i), find(j)
            if ri == rj:
                ok = False
                break
            parent[ri] = rj
        if ok:
            best = min(best, sum(D[i, j] for i, j in edges))
    return best


class TestMst:
    def test_collinear(self):
        edges = euclidean_mst([[0.0, 0.0], [2.0, 0.0], [1.0, 0.0]])
        assert len(edges) == 2
        assert sorted(e[2] for e in edges) == [1.0, 1.0]
        assert {frozenset(e[:2]) for e in edges} == {frozenset((0, 2)), frozenset((1, 2))}

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_exhaustive_enumeration(self, seed):
        pts = np.random.default_rng(seed).uniform(size=(6, 2))
        total = sum(e[2] for e in euclidean_mst(pts))
        assert total == pytest.approx(brute_force_mst_weight(pts), rel=1e-12)

    def test_matches_scipy_on_larger_set(self):
        pts = np.random.default_rng(9).normal(size=(200, 2))
        ref = minimum_spanning_tree(squareform(pdist(pts))).sum()
        edges = euclidean_mst(pts)
        assert len(edges) == 199
        assert sum(e[2] for e in edges) == pytest.approx(ref, rel=1e-10)

    def test_spans(self):
        pts = np.random.default_rng(3).uniform(size=(30, 2))
        touched = {i for e in euclidean_mst(pts) for i in e[:2]}
        assert touched == set(range(30))

    def test_tie_breaking_is_order_free(self):
        # unit square: four equal sides, any three form a tree
        pts = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        p = [2, 0, 3, 1]
        a = {frozenset(tuple(pts[i]) for i in e[:2]) for e in euclidean_mst(pts)}
        b = {frozenset(tuple(pts[p][i]) for i in e[:2]) for e in euclidean_mst(pts[p])}
        assert a == b

    def test_degenerate(self):
        with pytest.raises(DegenerateInput):
            euclidean_mst([[1.0, 1.0]])
        with pytest.raises(DegenerateInput):
            euclidean_mst([[1.0, 1.0], [1.0, 1.0], [2.0, 0.0]])
        with pytest.raises(ValueError):
            euclidean_mst([[1.0, 2.0, 3.0]])


class TestMeasures:
    def test_increasing_is_monotonic(self):
        x = np.arange(10.0)
        assert monotonic(x, np.exp(x)) == 1.0

    def test_monotonic_matches_scipy(self):
        rng = np.random.default_rng(0)
        x = rng.integers(0, 5, 40).astype(float)
        y = x + rng.normal(size=40)
        assert monotonic(x, y) == pytest.approx(spearmanr(x, y).statistic ** 2, rel=1e-12)

    def test_monotonic_sign_free(self):
        x, y = np.random.default_rng(1).normal(size=(2, 30))
        assert monotonic(x, -y) == pytest.approx(monotonic(x, y), abs=1e-15)

    def test_striped(self):
        assert striped(np.arange(50.0)) == 0.0
        assert striped(np.repeat(np.arange(5.0), 10)) == pytest.approx(0.9)

    def test_two_points_sparse(self):
        assert sparse(np.array([0.0, 1.0]), np.array([3.0, -1.0])) == 1.0

    def test_sparse_dense_grid(self):
        g = np.linspace(0, 1, 11)
        x, y = np.meshgrid(g, g)
        assert sparse(x.ravel(), y.ravel()) == pytest.approx(0.1)

    def test_splines_linear_is_one(self):
        x = np.random.default_rng(2).uniform(size=40)
        assert splines(x, 3 * x - 1) == 1.0

    def test_splines_interpolates_few_points(self):
        x = np.array([0.0, 0.1, 0.35, 0.6, 0.8, 1.0])
        y = np.array([1.0, -2.0, 0.5, 3.0, -1.0, 0.0])
        assert splines(x, y) == 1.0

    def test_splines_noise_is_low(self):
        x, y = np.random.default_rng(3).normal(size=(2, 400))
        assert 0.0 <= splines(x, y) < 0.05

    def test_splines_curve_is_high(self):
        x = np.random.default_rng(4).uniform(-1, 1, 300)
        y = np.sin(3 * x) + 0.05 * np.random.default_rng(5).normal(size=300)
        assert splines(x, y) > 0.95

    def test_splines_degenerate_zero(self):
        assert splines(np.arange(5.0), np.full(5, 2.0)) == 0.0
        assert splines(np.full(5, 1.0), np.arange(5.0)) == 0.0


class TestComputeAux:
    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 50), st.floats(-50, 50), st.floats(0.01, 50), st.floats(-50, 50))
    def test_affine_invariance(self, a, b, c, d):
        rng = np.random.default_rng(6)
        f = rng.uniform(size=60)
        e = f**2 + 0.1 * rng.normal(size=60)
        ref = compute_aux(e, f)
        got = compute_aux(c * e + d, a * f + b)
        np.testing.assert_allclose(got.as_array(), ref.as_array(), rtol=1e-6, atol=1e-9)

    def test_ranges_and_count(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(3, 200))
            aux = compute_aux(rng.normal(size=n), rng.integers(0, 8, n).astype(float))
            assert aux.n_obs == n
            assert np.all((aux.as_array()[:4] >= 0) & (aux.as_array()[:4] <= 1))

    def test_network_input(self):
        aux = AuxFeatures(0.1, 0.2, 0.3, 0.4, 500)
        np.testing.assert_allclose(aux.network_input(), [0.1, 0.2, 0.3, 0.4, 1.0])
        assert AuxFeatures(0, 0, 0, 0, 50).network_input()[4] == pytest.approx(np.log(50) / np.log(500))

    def test_errors(self):
        with pytest.raises(DegenerateInput):
            compute_aux([1.0, 1.0, 1.0], [2.0, 2.0, 2.0])
        with pytest.raises(DegenerateInput):
            compute_aux([1.0, 2.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            compute_aux([1.0, 2.0, 3.0], [1.0, 2.0])
