import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import gnp, oracle_lambda1
from spmguard.graph import Graph, complete_graph, cycle_graph, path_graph, star_graph
from spmguard.spectral import (NBCentralityError, StaleEigenPairError, centrality,
                               eigen_drop, eigen_scores, effective_strength,
                               leading_eigenpair, nb_centrality, spectral_radius,
                               write_edge_scores, write_node_scores)


class TestClosedForm:
    @pytest.mark.parametrize("n", [2, 3, 5, 12])
    def test_complete(self, n):
        assert spectral_radius(complete_graph(n)) == pytest.approx(n - 1, abs=1e-6)

    @pytest.mark.parametrize("m", [1, 4, 9, 30])
    def test_star(self, m):
        assert spectral_radius(star_graph(m)) == pytest.approx(math.sqrt(m), abs=1e-6)

    @pytest.mark.parametrize("n", [3, 4, 7, 50])
    def test_cycle(self, n):
        # even cycles are bipartite: -2 is also an eigenvalue
        assert spectral_radius(cycle_graph(n)) == pytest.approx(2.0, abs=1e-6)

    def test_edgeless(self):
        assert spectral_radius(Graph.empty(4)) == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_matches_jacobi_oracle(seed):
    rng = np.random.default_rng(seed)
    g = gnp(int(rng.integers(5, 120)), float(rng.uniform(0.02, 0.4)), seed)
    assert spectral_radius(g) == pytest.approx(oracle_lambda1(g), rel=1e-6, abs=1e-9)


def test_vector_properties():
    g = gnp(60, 0.1, 3)
    p = leading_eigenpair(g)
    assert np.linalg.norm(p.vector) == pytest.approx(1.0, abs=1e-9)
    assert p.vector.min() >= -1e-12
    assert p.lambda1 >= g.degrees.mean() - 1e-9
    assert p.lambda1 >= math.sqrt(g.degrees.max()) - 1e-9
    a = g.to_dense()
    assert np.abs(a @ p.vector - p.lambda1 * p.vector).max() < 1e-6


def test_multi_component_support_and_degeneracy():
    # K4 and a disjoint triangle: vector lives on the K4 only
    g = Graph.from_edges(7, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3),
                             (4, 5), (5, 6), (4, 6)])
    p = leading_eigenpair(g)
    assert p.lambda1 == pytest.approx(3.0)
    assert np.all(p.vector[4:] == 0) and not p.degenerate
    two = Graph.from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
    assert leading_eigenpair(two).degenerate


class TestEigenDrop:
    def test_values(self):
        assert eigen_drop(2.0, math.sqrt(2)) == pytest.approx(29.289, abs=1e-3)
        assert eigen_drop(3.3, 3.3) == 0.0
        assert eigen_drop(math.sqrt(8), 2.0) == pytest.approx(29.289, abs=1e-3)
        assert eigen_drop(1.0, 2.0) < 0

    def test_domain(self):
        with pytest.raises(ValueError):
            eigen_drop(0.0, 0.0)


class TestEigenScores:
    def test_triangle(self):
        g = complete_graph(3)
        assert eigen_scores(g, leading_eigenpair(g)) == pytest.approx([1 / 3] * 3, abs=1e-9)

    def test_star(self):
        g = star_graph(4)
        s = eigen_scores(g, leading_eigenpair(g))
        assert s == pytest.approx([1 / math.sqrt(2) / math.sqrt(8)] * 4, abs=1e-9)

    def test_path(self):
        s = eigen_scores(path_graph(3), leading_eigenpair(path_graph(3)))
        assert s[0] == pytest.approx(s[1], abs=1e-12)

    def test_stale_pair(self):
        with pytest.raises(StaleEigenPairError):
            eigen_scores(cycle_graph(5), leading_eigenpair(cycle_graph(6)))

    @pytest.mark.parametrize("seed", range(5))
    def test_sum_identity(self, seed):
        g = gnp(40, 0.15, seed)
        p = leading_eigenpair(g)
        assert 2 * eigen_scores(g, p).sum() == pytest.approx(p.lambda1, abs=1e-6)


class TestCentrality:
    def test_ens_clique(self):
        assert centrality(complete_graph(4), "ens").scores == pytest.approx([1.0] * 4)

    def test_ens_star_hub(self):
        assert centrality(star_graph(8), "ens").scores[0] == pytest.approx(8.0)

    def test_nb_cycle_uniform(self):
        s = centrality(cycle_graph(6), "nb").scores
        assert np.ptp(s) < 1e-9

    def test_nb_tree_errors(self):
        with pytest.raises(NBCentralityError):
            nb_centrality(star_graph(5))

    def test_degree(self):
        g = gnp(30, 0.2, 1)
        assert np.array_equal(centrality(g, "degree").scores, g.degrees)

    @pytest.mark.parametrize("seed", range(6))
    def test_nb_matches_dense_hashimoto(self, seed):
        g = gnp(18, 0.25, seed)
        core = g
        # peel to the 2-core by hand
        while core.n_edges and (core.degrees[core.alive] < 2).any():
            low = np.flatnonzero((core.degrees < 2) & core.alive & (core.degrees > 0))
            if low.size == 0:
                break
            core = core.without_nodes(low)
        if core.n_edges == 0:
            pytest.skip("empty 2-core")
        half = [(i, j) for i, j in core.edge_array().tolist()]
        half += [(j, i) for i, j in half]
        idx = {e: k for k, e in enumerate(half)}
        b = np.zeros((len(half), len(half)))
        for (u, v), k in idx.items():
            for w in core.neighbors(v).tolist():
                if w != u:
                    b[k, idx[(v, w)]] = 1.0
        # node score sums incoming half-edges, i.e. the eigenvector of B^T
        vals, vecs = np.linalg.eig(b.T)
        lead = np.real(vecs[:, np.argmax(np.real(vals))])
        lead = np.abs(lead)
        ref = np.zeros(g.n_nodes)
        for (u, v), k in idx.items():
            ref[v] += lead[k]
        ref /= np.linalg.norm(ref)
        assert nb_centrality(g) == pytest.approx(ref, abs=1e-6)


def test_effective_strength():
    assert effective_strength(2.0, 0.11, 0.07) == pytest.approx(3.1429, abs=1e-4)
    assert effective_strength(3.0, 0.0, 0.5) == 0.0
    assert effective_strength(4.0, 0.2, 0.2) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        effective_strength(1.0, 0.1, 0.0)


def test_score_dumps(tmp_path):
    g = complete_graph(3)
    write_node_scores(tmp_path / "n.csv", [1.0, 2.0, 3.0])
    write_edge_scores(tmp_path / "e.csv", g, eigen_scores(g, leading_eigenpair(g)))
    assert (tmp_path / "n.csv").read_text().splitlines()[0] == "node,score"
    assert len((tmp_path / "e.csv").read_text().splitlines()) == 4


@settings(max_examples=100)
@given(st.integers(0, 10_000), st.integers(4, 25), st.floats(0.1, 0.6), st.data())
def test_interlacing_under_edge_removal(seed, n, p, data):
    g = gnp(n, p, seed)
    e = g.edge_array()
    if e.shape[0] == 0:
        return
    k = data.draw(st.integers(1, e.shape[0]))
    pick = np.random.default_rng(seed).choice(e.shape[0], size=k, replace=False)
    assert spectral_radius(g.without_edges(e[pick])) <= spectral_radius(g) + 1e-9


@settings(max_examples=100)
@given(st.integers(0, 10_000), st.integers(2, 20), st.floats(0.1, 0.7))
def test_ens_bounds(seed, n, p):
    g = gnp(n, p, seed)
    s = centrality(g, "ens").scores
    d = g.degrees
    nz = d >= 1
    assert np.all(s[nz] >= 1 - 1e-12) and np.all(s[nz] <= d[nz] + 1e-12)
    assert np.all(s[~nz] == 0)
