import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gnnpurify.graphs import Graph, degree, er_random_graph, normalized_adjacency, relabel_nodes


def path_graph(n, label=0):
    return Graph(n, np.zeros((n, 1)), frozenset((i, i + 1) for i in range(n - 1)), label)


class TestGraph:
    def test_rejects_self_loop(self):
        with pytest.raises(ValueError, match="self-loop"):
            Graph(2, np.zeros((2, 1)), {(0, 0)})

    def test_rejects_out_of_range_edge(self):
        with pytest.raises(ValueError, match="out of range"):
            Graph(2, np.zeros((2, 1)), {(0, 5)})

    def test_reverse_edges_deduplicate(self):
        g = Graph(3, np.zeros((3, 1)), {(0, 1), (1, 0)})
        assert g.edges == frozenset({(0, 1)})

    def test_features_shape_checked(self):
        with pytest.raises(ValueError, match="features"):
            Graph(3, np.zeros((2, 1)))


class TestDegree:
    def test_path(self):
        assert degree(path_graph(3)).tolist() == [1, 2, 1]

    def test_single_node(self):
        assert degree(Graph(1, np.zeros((1, 1)))).tolist() == [0]

    def test_complete_triangle(self):
        g = er_random_graph(3, 1.0, seed=0)
        assert degree(g).tolist() == [2, 2, 2]


class TestNormalizedAdjacency:
    def test_single_node_identity(self):
        np.testing.assert_allclose(normalized_adjacency(Graph(1, np.zeros((1, 1)))), [[1.0]])

    def test_two_node_edge(self):
        # hand evaluation: both degrees-with-self-loop are 2, all entries 1/2
        g = Graph(2, np.zeros((2, 1)), {(0, 1)})
        np.testing.assert_allclose(normalized_adjacency(g), 0.5 * np.ones((2, 2)))

    def test_path_off_diagonal(self):
        # end node degree-with-loop 2, middle 3 -> entry 1/sqrt(6)
        a = normalized_adjacency(path_graph(3))
        assert a[0, 1] == pytest.approx(1.0 / np.sqrt(6.0), abs=1e-12)
        assert a[0, 1] == pytest.approx(0.4082, abs=1e-4)

    def test_symmetric_with_bounded_spectral_radius(self):
        for seed in range(5):
            g = er_random_graph(8, 0.4, seed=seed)
            a = normalized_adjacency(g)
            np.testing.assert_allclose(a, a.T)
            # power iteration
            v = np.ones(8) / np.sqrt(8)
            for _ in range(200):
                w = a @ v
                v = w / np.linalg.norm(w)
            assert abs(v @ a @ v) <= 1.0 + 1e-9


class TestErRandomGraph:
    def test_p_zero_empty(self):
        assert er_random_graph(4, 0.0, seed=3).edges == frozenset()

    def test_p_one_complete(self):
        assert len(er_random_graph(4, 1.0, seed=3).edges) == 6

    def test_deterministic(self):
        a = er_random_graph(10, 0.5, seed=7)
        b = er_random_graph(10, 0.5, seed=7)
        assert a.edges == b.edges

    def test_label_unset_and_zero_features(self):
        g = er_random_graph(4, 0.5, seed=0, feature_dim=3)
        assert g.label is None
        assert np.all(g.features == 0.0) and g.features.shape == (4, 3)


class TestRelabelNodes:
    def test_identity(self):
        g = path_graph(3, label=1)
        assert relabel_nodes(g, [0, 1, 2]) == g

    def test_swap_preserves_degree_multiset(self):
        g = path_graph(3)
        h = relabel_nodes(g, [2, 1, 0])
        assert sorted(degree(h).tolist()) == sorted(degree(g).tolist())

    def test_rejects_non_bijection(self):
        with pytest.raises(ValueError, match="bijection"):
            relabel_nodes(path_graph(3), [0, 0, 1])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.floats(0, 1), st.integers(0, 10**6))
def test_degree_sum_is_twice_edge_count(n, p, seed):
    g = er_random_graph(n, p, seed)
    assert degree(g).sum() == 2 * len(g.edges)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10**6), st.integers(0, 10**6))
def test_relabel_commutes_with_degree(n, gseed, pseed):
    g = er_random_graph(n, 0.4, gseed)
    perm = np.random.default_rng(pseed).permutation(n)
    deg_before = degree(g)
    deg_after = degree(relabel_nodes(g, perm))
    for i in range(n):
        assert deg_after[perm[i]] == deg_before[i]
