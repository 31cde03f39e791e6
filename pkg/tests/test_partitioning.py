import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.base import clone

from conftest import graph_from_adjacency, random_connected_graph
from roadhist.errors import ConfigurationError
from roadhist.partitioning import (
    GraphPartitioner,
    PartitionSet,
    edge_cut,
    form_batches,
    partition_graph,
    read_assignment_csv,
    write_assignment_csv,
)


def random_balanced_labels(rng, n, s):
    labels = np.repeat(np.arange(s), int(np.ceil(n / s)))[:n]
    rng.shuffle(labels)
    return labels


class TestPartitionGraph:
    def test_two_cliques_minimum_cut(self, two_clique_graph):
        part = partition_graph(two_clique_graph, 2, random_state=0)
        labels = part.labels
        # each clique lands in one cluster; only the bridge is cut
        assert len(set(labels[:4])) == 1
        assert len(set(labels[4:])) == 1
        assert labels[0] != labels[7]
        assert edge_cut(two_clique_graph, part) == 2  # both bridge directions

    def test_single_cluster_shortcut(self, two_clique_graph):
        part = partition_graph(two_clique_graph, 1)
        np.testing.assert_array_equal(part.labels, np.zeros(8, dtype=np.intp))

    def test_one_cluster_per_node_shortcut(self, two_clique_graph):
        part = partition_graph(two_clique_graph, 8)
        np.testing.assert_array_equal(part.labels, np.arange(8))
        # with singleton clusters every edge is cut
        assert edge_cut(two_clique_graph, part) == two_clique_graph.n_edges

    def test_too_many_clusters_rejected(self, two_clique_graph):
        with pytest.raises(ConfigurationError):
            partition_graph(two_clique_graph, 9)

    def test_invalid_cluster_count_rejected(self, two_clique_graph):
        for bad in (0, -1, 2.5):
            with pytest.raises(ConfigurationError):
                partition_graph(two_clique_graph, bad)

    def test_invalid_imbalance_rejected(self, two_clique_graph):
        with pytest.raises(ConfigurationError):
            partition_graph(two_clique_graph, 2, imbalance=0.9)

    @pytest.mark.parametrize("trial", range(10))
    def test_balance_and_coverage_random_graphs(self, trial):
        rng = np.random.default_rng(trial)
        n = int(rng.integers(20, 400))
        s = int(rng.choice([2, 4, 5, 8, 16]))
        s = min(s, n)
        adj = random_connected_graph(rng, n)
        part = partition_graph(adj, s, random_state=trial)
        sizes = part.cluster_sizes()
        cap = int(np.ceil(1.03 * n / s))
        assert sizes.shape == (s,)
        assert (sizes >= 1).all(), "empty cluster"
        assert sizes.max() <= cap, f"cluster over cap: {sizes.max()} > {cap}"
        assert part.labels.min() >= 0 and part.labels.max() < s

    def test_custom_imbalance_cap_respected(self):
        rng = np.random.default_rng(99)
        adj = random_connected_graph(rng, 100)
        part = partition_graph(adj, 4, imbalance=1.5, random_state=1)
        assert part.max_cluster_size() <= int(np.ceil(1.5 * 100 / 4))

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(7)
        adj = random_connected_graph(rng, 150)
        a = partition_graph(adj, 6, random_state=123)
        b = partition_graph(adj, 6, random_state=123)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_beats_random_balanced_assignment(self):
        # density objective: the cut should be clearly below what naive
        # balanced label shuffles produce
        wins = 0
        for trial in range(10):
            rng = np.random.default_rng(200 + trial)
            n = int(rng.integers(60, 200))
            adj = random_connected_graph(rng, n, extra_edges=3.0)
            s = 5
            part = partition_graph(adj, s, random_state=trial)
            ours = edge_cut(adj, part)
            random_cuts = [
                edge_cut(adj, random_balanced_labels(rng, n, s)) for _ in range(20)
            ]
            if ours <= np.median(random_cuts):
                wins += 1
        assert wins >= 9

    def test_clique_ring_close_to_optimal(self):
        # four 6-cliques joined in a ring by single edges; optimal cut
        # is the 4 ring edges (8 directed)
        blocks = 4
        size = 6
        n = blocks * size
        adj = np.zeros((n, n))
        for b in range(blocks):
            lo = b * size
            adj[lo : lo + size, lo : lo + size] = 1.0
        np.fill_diagonal(adj, 0.0)
        for b in range(blocks):
            i = b * size
            j = ((b + 1) % blocks) * size + size - 1
            adj[i, j] = adj[j, i] = 1.0
        part = partition_graph(sp.csr_matrix(adj), blocks, random_state=3)
        assert edge_cut(adj, part) <= 2 * 8

    def test_empty_adjacency_still_partitions(self):
        adj = sp.csr_matrix((6, 6))
        part = partition_graph(adj, 3, random_state=0)
        sizes = part.cluster_sizes()
        assert (sizes >= 1).all()
        assert sizes.sum() == 6

    def test_partition_set_accessors(self):
        labels = np.array([1, 0, 1, 2, 0, 1])
        part = PartitionSet(labels, 3, 1.03)
        clusters = part.clusters()
        np.testing.assert_array_equal(clusters[0], [1, 4])
        np.testing.assert_array_equal(clusters[1], [0, 2, 5])
        np.testing.assert_array_equal(clusters[2], [3])
        np.testing.assert_array_equal(part.cluster_sizes(), [2, 3, 1])
        assert part.max_cluster_size() == 3


class TestFormBatches:
    def make_graph(self, n=24, seed=0):
        rng = np.random.default_rng(seed)
        adj = random_connected_graph(rng, n)
        feats = rng.standard_normal((n, 5))
        return graph_from_adjacency(adj.toarray(), features=feats)

    def test_batch_count_and_cluster_split(self):
        graph = self.make_graph()
        part = partition_graph(graph, 8, random_state=1)
        batches = form_batches(graph, part, 4, random_state=2)
        assert len(batches) == 4
        for b in batches:
            assert len(b.cluster_ids) == 2
        all_clusters = np.sort(np.concatenate([b.cluster_ids for b in batches]))
        np.testing.assert_array_equal(all_clusters, np.arange(8))
        all_nodes = np.sort(np.concatenate([b.node_indices for b in batches]))
        np.testing.assert_array_equal(all_nodes, np.arange(graph.n_nodes))

    def test_single_batch_reproduces_graph_exactly(self):
        graph = self.make_graph(n=30, seed=3)
        part = partition_graph(graph, 6, random_state=4)
        (batch,) = form_batches(graph, part, 1, random_state=5)
        np.testing.assert_array_equal(batch.node_indices, np.arange(30))
        assert (batch.adjacency != graph.adjacency).nnz == 0
        np.testing.assert_array_equal(batch.features, graph.features)

    def test_batch_adjacency_is_induced_subgraph(self):
        graph = self.make_graph(n=20, seed=6)
        part = partition_graph(graph, 4, random_state=7)
        for batch in form_batches(graph, part, 2, random_state=8):
            dense = graph.adjacency.toarray()
            expected = dense[np.ix_(batch.node_indices, batch.node_indices)]
            np.testing.assert_array_equal(batch.adjacency.toarray(), expected)

    def test_labels_and_masks_row_indexed(self):
        graph = self.make_graph(n=16, seed=9)
        part = partition_graph(graph, 4, random_state=10)
        labels = np.arange(16, dtype=float).reshape(-1, 1) * np.ones((1, 3))
        mask = np.arange(16) % 2 == 0
        extra = {"val": np.arange(16) % 3 == 0}
        for batch in form_batches(
            graph, part, 2, random_state=11, labels=labels, mask=mask, extra_masks=extra
        ):
            np.testing.assert_array_equal(batch.labels[:, 0], batch.node_indices)
            np.testing.assert_array_equal(batch.mask, mask[batch.node_indices])
            np.testing.assert_array_equal(
                batch.extra_masks["val"], extra["val"][batch.node_indices]
            )

    def test_node_indices_sorted(self):
        graph = self.make_graph(n=40, seed=12)
        part = partition_graph(graph, 10, random_state=13)
        for batch in form_batches(graph, part, 5, random_state=14):
            assert (np.diff(batch.node_indices) > 0).all()

    def test_indivisible_batch_count_rejected(self):
        graph = self.make_graph()
        part = partition_graph(graph, 8, random_state=1)
        with pytest.raises(ConfigurationError):
            form_batches(graph, part, 3)

    def test_too_many_batches_rejected(self):
        graph = self.make_graph()
        part = partition_graph(graph, 8, random_state=1)
        with pytest.raises(ConfigurationError):
            form_batches(graph, part, 9)

    def test_batching_deterministic_per_seed(self):
        graph = self.make_graph()
        part = partition_graph(graph, 8, random_state=1)
        a = form_batches(graph, part, 4, random_state=42)
        b = form_batches(graph, part, 4, random_state=42)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.node_indices, y.node_indices)
            np.testing.assert_array_equal(x.cluster_ids, y.cluster_ids)


class TestEstimatorAndCsv:
    def test_estimator_api(self, two_clique_graph):
        est = GraphPartitioner(n_clusters=2, random_state=0)
        params = est.get_params()
        assert params["n_clusters"] == 2
        cloned = clone(est)
        labels = cloned.fit_predict(two_clique_graph)
        assert hasattr(cloned, "partition_")
        np.testing.assert_array_equal(labels, cloned.labels_)
        assert len(set(labels)) == 2

    def test_assignment_csv_round_trip(self, two_clique_graph, tmp_path):
        part = partition_graph(two_clique_graph, 2, random_state=0)
        path = tmp_path / "assignment.csv"
        write_assignment_csv(two_clique_graph.node_ids, part, path)
        back = read_assignment_csv(path)
        assert set(back) == set(two_clique_graph.node_ids)
        for i, sid in enumerate(two_clique_graph.node_ids):
            assert back[sid] == part.labels[i]
