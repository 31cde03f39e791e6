"""Multilevel graph partitioning and batch formation.

Splits a line graph into a requested number of dense clusters, then
groups whole clusters into training batches. The partitioner follows
the classic multilevel recipe:

1. coarsen by repeated heavy-edge matching until the graph is small
   (at most max(4 * n_clusters, 200) nodes),
2. seed clusters on the coarse graph by greedy region growing
   (components handled largest-first so disconnected graphs spread
   across clusters instead of starving some of them),
3. project back level by level, running a monotone boundary-refinement
   pass (only strictly cut-reducing moves are ever applied) plus a
   final rebalance on the original graph.

Balance is controlled by ``imbalance``, a multiplicative cap: no
cluster may exceed ceil(imbalance * n_nodes / n_clusters) nodes on the
finest level, and no cluster may be empty.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DataLoadError
from .graphs import LineGraph

COARSEN_FLOOR = 200
COARSEN_FACTOR = 4


@dataclass
class PartitionSet:
    """Cluster assignment for every node of a graph."""

    labels: np.ndarray
    n_clusters: int
    imbalance: float = 1.03

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp)

    @property
    def n_nodes(self) -> int:
        return self.labels.shape[0]

    def clusters(self) -> list:
        """List of node-index arrays, one per cluster id."""
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.n_clusters + 1))
        return [order[bounds[c]:bounds[c + 1]] for c in range(self.n_clusters)]

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_clusters)

    def max_cluster_size(self) -> int:
        return int(np.ceil(self.imbalance * self.n_nodes / self.n_clusters))


class _Level:
    """One level of the coarsening hierarchy: an undirected weighted
    graph as a list of neighbour->weight dicts plus node weights."""

    __slots__ = ("adj", "nw")

    def __init__(self, adj, nw):
        self.adj = adj
        self.nw = nw

    @property
    def n(self) -> int:
        return len(self.adj)

    @classmethod
    def from_adjacency(cls, adjacency) -> "_Level":
        a = sp.coo_matrix(adjacency)
        n = a.shape[0]
        adj = [dict() for _ in range(n)]
        for i, j, w in zip(a.row, a.col, a.data):
            if i == j or w == 0:
                continue
            # reciprocal road links end up with weight 2, which makes
            # heavy-edge matching prefer them
            adj[i][j] = adj[i].get(j, 0.0) + float(w)
            adj[j][i] = adj[j].get(i, 0.0) + float(w)
        return cls(adj, np.ones(n, dtype=np.int64))


def _heavy_edge_matching(level: _Level, rng) -> np.ndarray:
    """match[v] = partner (or v itself). Visits nodes in a random
    order; each unmatched node grabs its heaviest unmatched neighbour,
    ties broken toward the lowest node index."""
    n = level.n
    match = np.full(n, -1, dtype=np.intp)
    for v in rng.permutation(n):
        if match[v] != -1:
            continue
        best, best_w = -1, 0.0
        for u, w in level.adj[v].items():
            if match[u] != -1:
                continue
            if w > best_w or (w == best_w and (best == -1 or u < best)):
                best, best_w = u, w
        if best == -1:
            match[v] = v
        else:
            match[v] = best
            match[best] = v
    return match


def _contract(level: _Level, match: np.ndarray):
    """Merge matched pairs; returns (coarse level, fine->coarse map)."""
    n = level.n
    cmap = np.full(n, -1, dtype=np.intp)
    nc = 0
    for v in range(n):
        if cmap[v] != -1:
            continue
        cmap[v] = nc
        u = match[v]
        if u != v and cmap[u] == -1:
            cmap[u] = nc
        nc += 1
    nw = np.zeros(nc, dtype=np.int64)
    np.add.at(nw, cmap, level.nw)
    adj = [dict() for _ in range(nc)]
    for v in range(n):
        cv = cmap[v]
        av = adj[cv]
        for u, w in level.adj[v].items():
            cu = cmap[u]
            if cu != cv:
                av[cu] = av.get(cu, 0.0) + w
    return _Level(adj, nw), cmap


def _components(level: _Level) -> np.ndarray:
    comp = np.full(level.n, -1, dtype=np.intp)
    c = 0
    for start in range(level.n):
        if comp[start] != -1:
            continue
        stack = [start]
        comp[start] = c
        while stack:
            v = stack.pop()
            for u in level.adj[v]:
                if comp[u] == -1:
                    comp[u] = c
                    stack.append(u)
        c += 1
    return comp


def _region_grow(level: _Level, s: int, rng) -> np.ndarray:
    """Greedy graph growing on the coarse graph.

    Clusters are grown one at a time up to an adaptive weight budget;
    seeds prefer the connected component with the most unassigned
    weight, so every component gets covered and no cluster stays empty.
    """
    n = level.n
    assign = np.full(n, -1, dtype=np.intp)
    comp = _components(level)
    n_comp = comp.max() + 1
    comp_left = np.zeros(n_comp, dtype=np.int64)
    np.add.at(comp_left, comp, level.nw)
    left_total = int(level.nw.sum())
    unassigned = n

    def pick_seed():
        target = int(comp_left.argmax())
        for v in range(n):
            if assign[v] == -1 and comp[v] == target:
                return v
        return int(np.flatnonzero(assign == -1)[0])

    for c in range(s - 1):
        budget = left_total / (s - c)
        cw = 0
        heap = []
        gains: dict = {}
        while cw < budget and unassigned - 1 >= (s - 1 - c):
            v = -1
            while heap:
                negg, cand = heapq.heappop(heap)
                if assign[cand] == -1 and gains.get(cand) == -negg:
                    v = cand
                    break
            if v == -1:
                v = pick_seed()
            assign[v] = c
            cw += int(level.nw[v])
            unassigned -= 1
            comp_left[comp[v]] -= level.nw[v]
            left_total -= int(level.nw[v])
            for u, w in level.adj[v].items():
                if assign[u] != -1:
                    continue
                g = gains.get(u, 0.0) + w
                gains[u] = g
                heapq.heappush(heap, (-g, u))
    assign[assign == -1] = s - 1
    return assign


def _refine(level: _Level, assign: np.ndarray, s: int, cap: int,
            max_passes: int = 10) -> np.ndarray:
    """Boundary refinement: move a node to an adjacent cluster only if
    that strictly reduces the weighted edge cut, keeps the destination
    under ``cap`` and does not empty the source. The cut is therefore
    monotonically non-increasing across passes."""
    cw = np.zeros(s, dtype=np.int64)
    np.add.at(cw, assign, level.nw)
    counts = np.bincount(assign, minlength=s)
    for _ in range(max_passes):
        moved = False
        for v in range(level.n):
            cur = assign[v]
            if counts[cur] <= 1:
                continue
            conn: dict = {}
            for u, w in level.adj[v].items():
                conn[assign[u]] = conn.get(assign[u], 0.0) + w
            internal = conn.get(cur, 0.0)
            best_c, best_gain = -1, 0.0
            for c in sorted(conn):
                if c == cur:
                    continue
                gain = conn[c] - internal
                if gain > best_gain and cw[c] + level.nw[v] <= cap:
                    best_c, best_gain = c, gain
            if best_c != -1:
                cw[cur] -= level.nw[v]
                counts[cur] -= 1
                cw[best_c] += level.nw[v]
                counts[best_c] += 1
                assign[v] = best_c
                moved = True
        if not moved:
            break
    return assign


def _rebalance(level: _Level, assign: np.ndarray, s: int, cap: int) -> np.ndarray:
    """Move nodes out of over-cap clusters, cheapest-cut-damage first.
    Only runs on the finest level where unit node weights make the cap
    always feasible."""
    cw = np.zeros(s, dtype=np.int64)
    np.add.at(cw, assign, level.nw)
    while True:
        over = np.flatnonzero(cw > cap)
        if over.size == 0:
            return assign
        src = int(over[np.argmax(cw[over])])
        best = None  # (damage, v, dest)
        members = np.flatnonzero(assign == src)
        for v in members:
            conn: dict = {}
            for u, w in level.adj[v].items():
                conn[assign[u]] = conn.get(assign[u], 0.0) + w
            internal = conn.get(src, 0.0)
            for dest in range(s):
                if dest == src or cw[dest] + level.nw[v] > cap:
                    continue
                damage = internal - conn.get(dest, 0.0)
                key = (damage, v, dest)
                if best is None or key < best:
                    best = key
        if best is None:
            raise ConfigurationError(
                "cannot satisfy the balance cap; imbalance too small"
            )
        _, v, dest = best
        cw[src] -= level.nw[v]
        cw[dest] += level.nw[v]
        assign[v] = dest


def partition_graph(graph, n_clusters: int, imbalance: float = 1.03,
                    random_state=None) -> PartitionSet:
    """Partition a line graph into ``n_clusters`` dense clusters.

    Parameters
    ----------
    graph : LineGraph or square adjacency matrix
    n_clusters : int
        Must satisfy 1 <= n_clusters <= n_nodes.
    imbalance : float
        Multiplicative balance cap; the largest cluster holds at most
        ceil(imbalance * n_nodes / n_clusters) nodes.
    random_state : int, SeedSequence or Generator, optional
        Drives matching order and seed selection; a fixed value makes
        the partition fully reproducible.
    """
    adjacency = graph.adjacency if isinstance(graph, LineGraph) else sp.csr_matrix(graph)
    n = adjacency.shape[0]
    if not isinstance(n_clusters, (int, np.integer)) or n_clusters < 1:
        raise ConfigurationError(f"n_clusters must be a positive int, got {n_clusters!r}")
    if n_clusters > n:
        raise ConfigurationError(
            f"n_clusters={n_clusters} exceeds the node count {n}"
        )
    if imbalance < 1.0:
        raise ConfigurationError("imbalance must be >= 1.0")
    if n_clusters == 1:
        return PartitionSet(np.zeros(n, dtype=np.intp), 1, imbalance)
    if n_clusters == n:
        return PartitionSet(np.arange(n, dtype=np.intp), n, imbalance)

    rng = np.random.default_rng(random_state)
    finest = _Level.from_adjacency(adjacency)
    levels = [finest]
    maps = []
    target = max(COARSEN_FACTOR * n_clusters, COARSEN_FLOOR)
    while levels[-1].n > target:
        match = _heavy_edge_matching(levels[-1], rng)
        coarse, cmap = _contract(levels[-1], match)
        if coarse.n >= 0.95 * levels[-1].n:
            break  # matching stalled (near-empty edge set)
        levels.append(coarse)
        maps.append(cmap)

    cap = int(np.ceil(imbalance * n / n_clusters))
    assign = _region_grow(levels[-1], n_clusters, rng)
    for depth in range(len(levels) - 1, -1, -1):
        level = levels[depth]
        level_cap = max(cap, int(level.nw.max()))
        assign = _refine(level, assign, n_clusters, level_cap)
        if depth > 0:
            assign = assign[maps[depth - 1]]
    assign = _rebalance(finest, assign, n_clusters, cap)
    assign = _refine(finest, assign, n_clusters, cap)

    sizes = np.bincount(assign, minlength=n_clusters)
    if (sizes == 0).any() or (sizes > cap).any():
        raise AssertionError("partitioner produced an unbalanced assignment")
    return PartitionSet(assign, n_clusters, imbalance)


def edge_cut(graph, partition) -> int:
    """Number of directed edges whose endpoints live in different
    clusters."""
    adjacency = graph.adjacency if isinstance(graph, LineGraph) else sp.csr_matrix(graph)
    labels = partition.labels if isinstance(partition, PartitionSet) else np.asarray(partition)
    a = sp.coo_matrix(adjacency)
    off = a.row != a.col
    return int(np.sum(labels[a.row[off]] != labels[a.col[off]]))


# ---------------------------------------------------------------------------
# Batches


@dataclass
class Batch:
    """A training batch: a group of whole clusters with the original
    adjacency induced on its nodes (edges between the batch's clusters
    are kept; edges to outside nodes are dropped)."""

    node_indices: np.ndarray
    cluster_ids: np.ndarray
    adjacency: sp.csr_matrix
    features: object
    labels: object = None
    mask: object = None
    extra_masks: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.node_indices.shape[0]


def form_batches(graph: LineGraph, partition: PartitionSet, num_batches: int,
                 random_state=None, labels=None, mask=None, extra_masks=None):
    """Group clusters into ``num_batches`` batches of equal cluster
    count (clusters shuffled by ``random_state`` first).

    ``num_batches`` must divide the cluster count and cannot exceed
    it. With ``num_batches=1`` the single batch reproduces the whole
    graph: node order and adjacency match the input exactly.

    ``labels``/``mask`` (and any named arrays in ``extra_masks``) are
    row-indexed per batch alongside the feature matrix.
    """
    s = partition.n_clusters
    if not isinstance(num_batches, (int, np.integer)) or num_batches < 1:
        raise ConfigurationError(f"num_batches must be a positive int, got {num_batches!r}")
    if num_batches > s:
        raise ConfigurationError(
            f"num_batches={num_batches} exceeds the cluster count {s}"
        )
    if s % num_batches != 0:
        raise ConfigurationError(
            f"num_batches={num_batches} does not divide the cluster count {s}"
        )
    q = s // num_batches
    rng = np.random.default_rng(random_state)
    order = rng.permutation(s)
    clusters = partition.clusters()
    batches = []
    for b in range(num_batches):
        ids = np.sort(order[b * q:(b + 1) * q])
        nodes = np.sort(np.concatenate([clusters[c] for c in ids]))
        batches.append(
            Batch(
                node_indices=nodes,
                cluster_ids=ids,
                adjacency=graph.subgraph_adjacency(nodes),
                features=graph.features[nodes],
                labels=None if labels is None else np.asarray(labels)[nodes],
                mask=None if mask is None else np.asarray(mask)[nodes],
                extra_masks={
                    k: np.asarray(v)[nodes] for k, v in (extra_masks or {}).items()
                },
            )
        )
    return batches


# ---------------------------------------------------------------------------
# Estimator wrapper and CSV interchange


try:
    from sklearn.base import BaseEstimator
except ImportError:  # pragma: no cover
    BaseEstimator = object


class GraphPartitioner(BaseEstimator):
    """Clusterer-style wrapper around :func:`partition_graph`.

    Parameters
    ----------
    n_clusters : int
    imbalance : float, default 1.03
    random_state : int or None

    Attributes
    ----------
    labels_ : ndarray of shape (n_nodes,)
    partition_ : PartitionSet
    """

    def __init__(self, n_clusters=8, imbalance=1.03, random_state=None):
        self.n_clusters = n_clusters
        self.imbalance = imbalance
        self.random_state = random_state

    def fit(self, X, y=None):
        self.partition_ = partition_graph(
            X, self.n_clusters, self.imbalance, self.random_state
        )
        self.labels_ = self.partition_.labels
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


def write_assignment_csv(node_ids, partition, path):
    labels = partition.labels if isinstance(partition, PartitionSet) else partition
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["segment_id", "cluster"])
        for sid, c in zip(node_ids, labels):
            w.writerow([sid, int(c)])


def read_assignment_csv(path) -> dict:
    out = {}
    try:
        f = open(path, newline="")
    except OSError as e:
        raise DataLoadError(f"cannot open assignment file: {e}") from e
    with f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["segment_id", "cluster"]:
            raise DataLoadError(f"{path}: expected header segment_id,cluster")
        for row in reader:
            out[row["segment_id"]] = int(row["cluster"])
    return out
