"""Co-purchase counts and thresholded graph versus naive oracles."""

import numpy as np
import pytest
import scipy.sparse as sp

from bundlekit.data import InteractionMatrix, Vocabulary
from bundlekit.errors import ConfigError
from bundlekit.graph import (
    build_item_graph,
    copurchase_counts,
    interactions_checksum,
    load_graph_cache,
    save_graph_cache,
    threshold_graph,
)


def interactions_from_dense(x_dense):
    x_dense = np.asarray(x_dense, dtype=np.int64)
    return InteractionMatrix(
        sp.csr_matrix(x_dense),
        Vocabulary(f"u{k}" for k in range(x_dense.shape[0])),
        Vocabulary(f"i{k}" for k in range(x_dense.shape[1])),
    )


def brute_force_counts(x_dense):
    """Triple-loop co-interaction counts; the independent oracle."""
    x = np.asarray(x_dense)
    n_users, n_items = x.shape
    out = np.zeros((n_items, n_items), dtype=np.int64)
    for i in range(n_items):
        for j in range(n_items):
            for u in range(n_users):
                out[i, j] += int(x[u, i] and x[u, j])
    return out


def brute_force_edges(counts, epsilon):
    n = counts.shape[0]
    return {(i, j) for i in range(n) for j in range(n) if counts[i, j] >= epsilon and i != j}


class TestCopurchaseCounts:
    def test_hand_example(self):
        # X^T X by hand: items 0,1 share two users; item 2 has one user
        x = [[1, 1, 0], [1, 1, 1]]
        expected = [[2, 2, 1], [2, 2, 1], [1, 1, 1]]
        counts = copurchase_counts(interactions_from_dense(x))
        assert np.array_equal(counts.toarray(), expected)
        assert np.array_equal(counts.toarray(), np.asarray(x).T @ np.asarray(x))

    def test_all_zero_interactions(self):
        counts = copurchase_counts(interactions_from_dense(np.zeros((3, 4))))
        assert counts.nnz == 0

    def test_diagonal_is_item_degree(self):
        rng = np.random.default_rng(1)
        x = (rng.random((8, 10)) < 0.4).astype(np.int64)
        counts = copurchase_counts(interactions_from_dense(x)).toarray()
        assert np.array_equal(np.diag(counts), x.sum(axis=0))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        x = (rng.random((20, 30)) < 0.25).astype(np.int64)
        counts = copurchase_counts(interactions_from_dense(x)).toarray()
        assert np.array_equal(counts, brute_force_counts(x))


class TestThresholdGraph:
    def test_hand_example_eps2(self):
        counts = copurchase_counts(interactions_from_dense([[1, 1, 0], [1, 1, 1]]))
        graph = threshold_graph(counts, 2)
        assert graph.undirected_pairs() == [(0, 1)]
        assert graph.neighbors[2].tolist() == []  # diagonal 2 never counts

    def test_hand_example_eps1(self):
        counts = copurchase_counts(interactions_from_dense([[1, 1, 0], [1, 1, 1]]))
        graph = threshold_graph(counts, 1)
        assert {(i, j) for i, j in graph.undirected_pairs()} == {(0, 1), (0, 2), (1, 2)}
        assert graph.degree.tolist() == [2, 2, 2]

    def test_epsilon_must_be_positive(self):
        counts = sp.csr_matrix(np.ones((2, 2)))
        for bad in (0, -3):
            with pytest.raises(ConfigError):
                threshold_graph(counts, bad)

    @pytest.mark.parametrize("epsilon", [1, 2, 4])
    def test_matches_brute_force(self, epsilon):
        rng = np.random.default_rng(epsilon)
        x = (rng.random((20, 30)) < 0.3).astype(np.int64)
        interactions = interactions_from_dense(x)
        graph = build_item_graph(interactions, epsilon)
        got = {(i, int(j)) for i in range(30) for j in graph.neighbors[i]}
        assert got == brute_force_edges(brute_force_counts(x), epsilon)

    def test_monotone_in_epsilon(self):
        rng = np.random.default_rng(42)
        x = (rng.random((15, 12)) < 0.5).astype(np.int64)
        counts = copurchase_counts(interactions_from_dense(x))
        edges = [set(threshold_graph(counts, eps).undirected_pairs()) for eps in (1, 2, 3, 5)]
        for tighter, looser in zip(edges[1:], edges):
            assert tighter <= looser

    def test_symmetric_and_loop_free(self):
        rng = np.random.default_rng(7)
        x = (rng.random((10, 9)) < 0.6).astype(np.int64)
        graph = build_item_graph(interactions_from_dense(x), 2)
        for i in range(graph.n_items):
            assert i not in graph.neighbors[i]
            for j in graph.neighbors[i]:
                assert i in graph.neighbors[int(j)]

    def test_isolated_items_kept(self):
        graph = build_item_graph(interactions_from_dense([[1, 0, 0], [0, 0, 1]]), 1)
        assert graph.n_items == 3
        assert graph.degree.tolist() == [0, 0, 0]

    def test_edge_arrays_cover_both_directions(self):
        counts = copurchase_counts(interactions_from_dense([[1, 1, 0], [1, 1, 1]]))
        graph = threshold_graph(counts, 1)
        src, tgt = graph.edge_arrays()
        assert len(src) == 2 * graph.n_edges
        assert set(zip(tgt.tolist(), src.tolist())) == {
            (0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1),
        }


class TestGraphCache:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        x = (rng.random((12, 10)) < 0.4).astype(np.int64)
        interactions = interactions_from_dense(x)
        graph = build_item_graph(interactions, 2)
        digest = interactions_checksum(interactions)
        save_graph_cache(graph, tmp_path / "graph.tsv", digest)
        loaded = load_graph_cache(tmp_path / "graph.tsv", 2, digest)
        assert loaded is not None
        assert [n.tolist() for n in loaded.neighbors] == [n.tolist() for n in graph.neighbors]

    def test_invalidated_on_epsilon_change(self, tmp_path):
        x = np.ones((3, 3), dtype=np.int64)
        interactions = interactions_from_dense(x)
        graph = build_item_graph(interactions, 1)
        digest = interactions_checksum(interactions)
        save_graph_cache(graph, tmp_path / "graph.tsv", digest)
        assert load_graph_cache(tmp_path / "graph.tsv", 2, digest) is None

    def test_invalidated_on_data_change(self, tmp_path):
        a = interactions_from_dense(np.ones((3, 3)))
        b = interactions_from_dense(np.eye(3))
        graph = build_item_graph(a, 1)
        save_graph_cache(graph, tmp_path / "graph.tsv", interactions_checksum(a))
        assert load_graph_cache(tmp_path / "graph.tsv", 1, interactions_checksum(b)) is None
