"""Graph construction, normalization and edge-drop machinery."""

import numpy as np
import pytest

from dropguard import (DropSpec, GraphError, WITH_SELF_LOOPS, WITHOUT_SELF_LOOPS,
                       build_graph, drop_single_edge, edge_keep_mask,
                       induced_subgraph, l_hop_subgraph, random_edge_drop,
                       sym_normalize)


def make_graph(edges, n, m=3, labels=None, masks=None, seed=0):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n, m))
    if labels is None:
        labels = np.zeros(n, dtype=np.int64)
    return build_graph(edges, feats, labels, masks or {})


def dense_sym_normalize(n, edges, with_loops):
    """Independent dense oracle for D^-1/2 A D^-1/2."""
    a = np.zeros((n, n))
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    if with_loops:
        a += np.eye(n)
    deg = a.sum(axis=1)
    inv = np.zeros(n)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    return inv[:, None] * a * inv[None, :]


class TestBuildGraph:
    def test_canonicalization_removes_duplicates_and_self_loops(self):
        g = make_graph([(0, 1), (1, 0), (1, 1)], 2)
        assert g.edges.tolist() == [[0, 1]]

    def test_empty_edge_list(self):
        g = make_graph([], 3)
        assert g.num_edges == 0
        assert g.degrees.tolist() == [0, 0, 0]

    def test_citation_scale_counts(self):
        # citation-network-scale input: 2708 nodes, 5429 undirected edges,
        # 1443 features, 7 classes
        rng = np.random.default_rng(42)
        edges = set()
        while len(edges) < 5429:
            u, v = rng.integers(0, 2708, size=2)
            if u != v:
                edges.add((min(u, v), max(u, v)))
        feats = rng.normal(size=(2708, 1443))
        labels = rng.integers(0, 7, size=2708)
        g = build_graph(sorted(edges), feats, labels, num_classes=7)
        assert g.num_nodes == 2708
        assert g.num_edges == 5429
        assert g.feature_dim == 1443
        assert g.num_classes == 7

    def test_out_of_range_endpoint(self):
        with pytest.raises(GraphError):
            make_graph([(0, 5)], 3)

    def test_ragged_features(self):
        with pytest.raises(GraphError):
            build_graph([(0, 1)], np.zeros(4), [0, 0])

    def test_overlapping_masks(self):
        with pytest.raises(GraphError):
            make_graph([(0, 1)], 3, masks={"a": [0, 1], "b": [1, 2]})

    def test_csr_matches_edge_list(self):
        rng = np.random.default_rng(1)
        n = 30
        edges = [(int(u), int(v)) for u, v in rng.integers(0, n, size=(60, 2))
                 if u != v]
        g = make_graph(edges, n)
        from_csr = set()
        for u in range(n):
            for v in g.neighbors(u):
                from_csr.add((min(u, int(v)), max(u, int(v))))
        assert from_csr == {tuple(e) for e in g.edges.tolist()}

    def test_arrays_are_read_only(self):
        g = make_graph([(0, 1)], 2)
        with pytest.raises(ValueError):
            g.edges[0, 0] = 5


class TestSymNormalize:
    def test_path_without_self_loops(self):
        g = make_graph([(0, 1), (1, 2)], 3)
        norm = sym_normalize(g, WITHOUT_SELF_LOOPS)
        assert norm.matrix[0, 1] == pytest.approx(0.70711, abs=1e-5)
        oracle = dense_sym_normalize(3, g.edges, with_loops=False)
        assert np.allclose(norm.matrix.toarray(), oracle)

    def test_path_with_self_loops(self):
        g = make_graph([(0, 1), (1, 2)], 3)
        norm = sym_normalize(g, WITH_SELF_LOOPS)
        assert norm.matrix[0, 0] == pytest.approx(0.5)
        oracle = dense_sym_normalize(3, g.edges, with_loops=True)
        assert np.allclose(norm.matrix.toarray(), oracle)

    def test_single_isolated_node(self):
        g = make_graph([], 1)
        norm = sym_normalize(g, WITHOUT_SELF_LOOPS)
        assert norm.matrix.nnz == 0

    def test_isolated_row_zero_without_loops(self):
        g = make_graph([(0, 1)], 3)
        dense = sym_normalize(g, WITHOUT_SELF_LOOPS).matrix.toarray()
        assert not dense[2].any()

    @pytest.mark.parametrize("mode", [WITH_SELF_LOOPS, WITHOUT_SELF_LOOPS])
    def test_symmetry_and_range(self, mode):
        rng = np.random.default_rng(3)
        edges = {(int(min(u, v)), int(max(u, v)))
                 for u, v in rng.integers(0, 25, size=(80, 2)) if u != v}
        g = make_graph(sorted(edges), 25)
        mat = sym_normalize(g, mode).matrix.toarray()
        assert np.array_equal(mat, mat.T)
        vals = mat[mat != 0]
        assert (vals > 0).all() and (vals <= 1).all()
        if mode == WITHOUT_SELF_LOOPS:
            assert not np.diag(mat).any()
        assert np.allclose(mat, dense_sym_normalize(25, g.edges,
                                                    mode == WITH_SELF_LOOPS))


class TestRandomEdgeDrop:
    def test_zero_drop_keeps_everything(self):
        g = make_graph([(0, 1), (1, 2), (0, 2)], 3)
        pg = random_edge_drop(g, 0.0, seed=1, iteration_index=1)
        assert pg.kept_edges.shape[0] == 3
        assert pg.dropped_edges.shape[0] == 0

    def test_total_drop(self):
        g = make_graph([(0, 1), (1, 2)], 3)
        pg = random_edge_drop(g, 1.0, seed=1, iteration_index=1)
        assert pg.kept_edges.shape[0] == 0

    def test_monte_carlo_drop_fraction(self):
        # 10 000 rounds on a 100-edge graph: mean dropped fraction within
        # 0.01 of the Binomial mean 0.5
        fractions = np.array([(~edge_keep_mask(100, 0.5, 7, k)).mean()
                              for k in range(10_000)])
        assert abs(fractions.mean() - 0.5) < 0.01

    def test_per_edge_marginal(self):
        # empirical per-edge drop frequency within 4*sqrt(p(1-p)/R)
        reps, prob, n_edges = 10_000, 0.3, 12
        drops = np.zeros(n_edges)
        for k in range(reps):
            drops += ~edge_keep_mask(n_edges, prob, 123, k)
        freq = drops / reps
        tol = 4 * np.sqrt(prob * (1 - prob) / reps)
        assert (np.abs(freq - prob) < tol).all()

    @pytest.mark.parametrize("prob", [0.2, 0.5, 0.8])
    def test_partition_exhaustive(self, prob):
        rng = np.random.default_rng(5)
        edges = sorted({(int(min(u, v)), int(max(u, v)))
                        for u, v in rng.integers(0, 10, size=(20, 2)) if u != v})
        g = make_graph(edges, 10)
        for k in range(25):
            pg = random_edge_drop(g, prob, seed=9, iteration_index=k)
            kept = {tuple(e) for e in pg.kept_edges.tolist()}
            dropped = {tuple(e) for e in pg.dropped_edges.tolist()}
            assert kept | dropped == {tuple(e) for e in g.edges.tolist()}
            assert not kept & dropped

    def test_determinism(self):
        g = make_graph([(i, i + 1) for i in range(40)], 41)
        a = random_edge_drop(g, 0.4, seed=11, iteration_index=3)
        b = random_edge_drop(g, 0.4, seed=11, iteration_index=3)
        assert np.array_equal(a.keep_mask, b.keep_mask)
        c = random_edge_drop(g, 0.4, seed=11, iteration_index=4)
        assert not np.array_equal(a.keep_mask, c.keep_mask)

    def test_degrees_recomputed(self):
        g = make_graph([(0, 1), (1, 2), (0, 2)], 3)
        pg = drop_single_edge(g, (0, 1))
        assert pg.degrees.tolist() == [1, 1, 2]

    def test_invalid_drop_prob(self):
        with pytest.raises(GraphError):
            DropSpec(drop_prob=1.5, iterations=1, seed=0)
        with pytest.raises(GraphError):
            DropSpec(drop_prob=0.5, iterations=0, seed=0)


class TestDropSingleEdge:
    def test_path_drop_isolates_endpoint(self):
        g = make_graph([(0, 1), (1, 2)], 3)
        pg = drop_single_edge(g, (0, 1))
        assert pg.degrees.tolist() == [0, 1, 1]

    def test_unknown_edge(self):
        g = make_graph([(0, 1)], 3)
        with pytest.raises(GraphError):
            drop_single_edge(g, (0, 2))

    def test_commutes_with_normalization(self):
        rng = np.random.default_rng(8)
        edges = sorted({(int(min(u, v)), int(max(u, v)))
                        for u, v in rng.integers(0, 8, size=(14, 2)) if u != v})
        g = make_graph(edges, 8, seed=8)
        target = tuple(g.edges[2])
        via_drop = drop_single_edge(g, target).normalized(WITHOUT_SELF_LOOPS)
        remaining = [e for e in map(tuple, g.edges.tolist()) if e != target]
        rebuilt = build_graph(remaining, g.features, g.labels)
        direct = sym_normalize(rebuilt, WITHOUT_SELF_LOOPS)
        assert np.allclose(via_drop.matrix.toarray(), direct.matrix.toarray())


class TestLHopSubgraph:
    def test_path_two_hops(self):
        g = make_graph([(0, 1), (1, 2), (2, 3)], 4)
        sub, node_map = l_hop_subgraph(g, 0, 2)
        assert node_map.tolist() == [0, 1, 2]
        assert sub.num_edges == 2

    def test_isolated_center(self):
        g = make_graph([(1, 2)], 3)
        sub, node_map = l_hop_subgraph(g, 0, 3)
        assert node_map.tolist() == [0]
        assert sub.num_edges == 0

    def test_regular_graph_bound(self):
        # brute-force BFS oracle on a 3-regular graph; 2-hop ball has at
        # most 1 + 3 + 3*2 nodes
        from dropguard.synth import SyntheticConfig, gen_synthetic_graph
        g = gen_synthetic_graph(SyntheticConfig(
            num_nodes=40, num_classes=2, feature_dim=4, topology="regular",
            regular_degree=3, seed=3))
        visited = {5}
        frontier = {5}
        for _ in range(2):
            frontier = {int(v) for u in frontier for v in g.neighbors(u)} - visited
            visited |= frontier
        sub, node_map = l_hop_subgraph(g, 5, 2)
        assert set(node_map.tolist()) == visited
        assert len(node_map) <= 1 + 3 + 3 * 2

    def test_features_follow_node_map(self):
        g = make_graph([(0, 2), (2, 4)], 5, seed=2)
        sub, node_map = l_hop_subgraph(g, 0, 1)
        assert np.array_equal(sub.features, g.features[node_map])


class TestInducedSubgraph:
    def test_edges_and_masks(self):
        g = make_graph([(0, 1), (1, 2), (2, 3), (0, 3)], 4,
                       masks={"keep": [0, 1], "other": [3]})
        sub, node_map = induced_subgraph(g, np.array([0, 1, 3]))
        assert node_map.tolist() == [0, 1, 3]
        assert sub.edges.tolist() == [[0, 1], [0, 2]]
        assert sub.masks["keep"].tolist() == [0, 1]
        assert sub.masks["other"].tolist() == [2]
