import json
import os

import numpy as np
import pytest
import scipy.sparse as sp

from roadhist.datasets import SynthConfig, generate_synthetic
from roadhist.graphs import LineGraph, RoadNetwork, Segment, build_line_graph


def graph_from_adjacency(adjacency, features=None, node_ids=None):
    """Wrap a raw adjacency matrix in a LineGraph for algorithm tests."""
    adjacency = sp.csr_matrix(np.asarray(adjacency, dtype=np.float64))
    n = adjacency.shape[0]
    if features is None:
        features = np.eye(n, dtype=np.float64)
    if node_ids is None:
        node_ids = [f"s{i}" for i in range(n)]
    names = [f"f{i}" for i in range(features.shape[1])]
    return LineGraph(
        node_ids=list(node_ids),
        adjacency=adjacency,
        features=np.asarray(features, dtype=np.float64),
        feature_names=names,
    )


def random_connected_graph(rng, n, extra_edges=2.0):
    """Random connected undirected graph as a symmetric adjacency matrix."""
    order = rng.permutation(n)
    rows = []
    cols = []
    for i in range(1, n):
        j = order[rng.integers(0, i)]
        rows.append(order[i])
        cols.append(j)
    n_extra = int(extra_edges * n)
    rows.extend(rng.integers(0, n, size=n_extra))
    cols.extend(rng.integers(0, n, size=n_extra))
    data = np.ones(len(rows), dtype=np.float64)
    adj = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    adj = adj.maximum(adj.T).tolil()
    adj.setdiag(0.0)
    adj = adj.tocsr()
    adj.eliminate_zeros()
    adj.data[:] = 1.0
    return adj


def planted_partition_dataset(rng, n_per=30, n_classes=3, p_in=0.25, p_out=0.02):
    """Citation style fixture: block structured graph, class aligned features."""
    n = n_per * n_classes
    labels = np.repeat(np.arange(n_classes), n_per)
    probs = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    upper = np.triu(rng.random((n, n)) < probs, k=1)
    adj = sp.csr_matrix((upper | upper.T).astype(np.float64))
    # class aligned binary features with some noise, Cora like shape
    n_feat = 24
    feats = (rng.random((n, n_feat)) < 0.05).astype(np.float64)
    for c in range(n_classes):
        block = slice(c * 8, (c + 1) * 8)
        mask = labels == c
        feats[mask, block] = (rng.random((n_per, 8)) < 0.55).astype(np.float64)
    graph = graph_from_adjacency(adj.toarray(), features=feats)
    train_mask = np.zeros(n, dtype=bool)
    test_mask = np.zeros(n, dtype=bool)
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        train_mask[idx[: n_per // 2]] = True
        test_mask[idx[n_per // 2 :]] = True
    return graph, labels, train_mask, test_mask


@pytest.fixture(scope="session")
def tiny_network():
    """Four intersections in a row plus a side spur, mixed oneway flags.

    a --s1--> b <--s2--> c --s3--> d
                  |
                 s4 (two way, c to e)
    """
    segments = [
        Segment("s1", "a", "b", features={"speed_limit": "50", "length": 100.0}, oneway=True),
        Segment("s2", "b", "c", features={"speed_limit": "50", "length": 80.0}, oneway=False),
        Segment("s3", "c", "d", features={"speed_limit": "30", "length": 60.0}, oneway=True),
        Segment("s4", "c", "e", features={"speed_limit": "30", "length": 40.0}, oneway=False),
    ]
    return RoadNetwork(
        intersections=["a", "b", "c", "d", "e"], segments=segments
    )


@pytest.fixture(scope="session")
def small_dataset():
    cfg = SynthConfig(grid_rows=6, grid_cols=6)
    dataset, network, observations = generate_synthetic(cfg, seed=7)
    return dataset, network, observations


@pytest.fixture(scope="session")
def small_graph(small_dataset):
    return small_dataset[0].graph


def write_fake_cora(base_dir, rng=None, n_nodes=40, n_feats=12, n_classes=4):
    """Small corpus written in the exact two file citation format."""
    if rng is None:
        rng = np.random.default_rng(5)
    os.makedirs(base_dir, exist_ok=True)
    ids = [str(100 + 3 * i) for i in range(n_nodes)]
    classes = [f"Class_{i % n_classes}" for i in range(n_nodes)]
    feats = (rng.random((n_nodes, n_feats)) < 0.3).astype(int)
    content_path = os.path.join(base_dir, "cora.content")
    with open(content_path, "w", encoding="utf-8") as fh:
        # deliberately scrambled row order, loader must keep file order
        for i in rng.permutation(n_nodes):
            row = [ids[i]] + [str(v) for v in feats[i]] + [classes[i]]
            fh.write("\t".join(row) + "\n")
    edges = set()
    while len(edges) < 3 * n_nodes:
        a, b = rng.integers(0, n_nodes, size=2)
        if a != b:
            edges.add((ids[a], ids[b]))
    cites_path = os.path.join(base_dir, "cora.cites")
    with open(cites_path, "w", encoding="utf-8") as fh:
        for cited, citing in sorted(edges):
            fh.write(f"{cited}\t{citing}\n")
    meta = {"ids": ids, "classes": classes, "features": feats.tolist(),
            "edges": sorted(edges)}
    return meta


@pytest.fixture()
def fake_cora(tmp_path):
    meta = write_fake_cora(str(tmp_path))
    return str(tmp_path), meta


@pytest.fixture(scope="session")
def two_clique_graph():
    """Two 4-cliques joined by a single bridge edge, minimum cut is 1."""
    n = 8
    adj = np.zeros((n, n))
    for block in (range(0, 4), range(4, 8)):
        for i in block:
            for j in block:
                if i != j:
                    adj[i, j] = 1.0
    adj[3, 4] = adj[4, 3] = 1.0
    return graph_from_adjacency(adj)


@pytest.fixture(scope="session")
def line_graph_tiny(tiny_network):
    return build_line_graph(tiny_network, categorical_features=("speed_limit",))
