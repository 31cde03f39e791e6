"""Walk-based node embeddings and the small MLP heads trained on them.

Beyond plain topology walks, two ways of folding node features into
the embedding are provided:

* ``feature_graph``: build a weighted directed graph over the *values*
  of one feature (edge weight = how many line-graph edges connect a
  node holding value a to a node holding value b, self-loops included),
  walk that graph, and embed the values.
* ``sequence``: walk the topology, then substitute every node id in
  the walks with the node's feature value, and embed the resulting
  value sequences. The value corpus has the full size of the topology
  corpus, unlike the feature graph whose corpus only scales with the
  number of distinct values.

Continuous features are discretised into deciles before either
treatment; :func:`build_feature_graph` refuses raw continuous input.

The skip-gram trainer is a plain negative-sampling implementation over
numpy (unigram^0.75 negative table, per-position reduced windows,
linearly decaying learning rate), fully driven by an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import nn
from .errors import ConfigurationError
from .graphs import LineGraph


# ---------------------------------------------------------------------------
# Random walks


def _as_seedseq(random_state) -> np.random.SeedSequence:
    if isinstance(random_state, np.random.SeedSequence):
        return random_state
    return np.random.SeedSequence(random_state)


def _walk_tables(n, edge_iter):
    """Per-node neighbour/weight arrays (neighbours sorted by index)."""
    nbr: list = [dict() for _ in range(n)]
    for i, j, w in edge_iter:
        nbr[i][j] = nbr[i].get(j, 0.0) + float(w)
    nbrs, wts = [], []
    for d in nbr:
        keys = np.array(sorted(d), dtype=np.intp)
        nbrs.append(keys)
        wts.append(np.array([d[k] for k in keys]))
    return nbrs, wts


def _tables_from_graph(graph):
    if isinstance(graph, LineGraph):
        a = sp.coo_matrix(graph.adjacency)
        return _walk_tables(graph.n_nodes, zip(a.row, a.col, a.data))
    if isinstance(graph, FeatureGraph):
        return _walk_tables(
            len(graph.values),
            ((i, j, w) for i, row in enumerate(graph.weights) for j, w in row.items()),
        )
    raise TypeError(f"cannot walk a {type(graph).__name__}")


def random_walks(graph, walk_length: int = 80, walks_per_node: int = 10,
                 p: float = 1.0, q: float = 1.0, random_state=None) -> list:
    """Second-order biased random walks from every node.

    ``walk_length`` is the maximum number of tokens per walk; walks
    truncate early at sinks. The return bias ``p`` and in-out bias
    ``q`` follow the usual convention: stepping back to the previous
    node is reweighted by 1/p, stepping to a node not adjacent from the
    previous node by 1/q.

    Each source node draws from its own child of the master seed, so
    walks from one node are unaffected by how many other nodes exist.
    Returns a list of walks; tokens are node indices.
    """
    if walk_length < 1 or walks_per_node < 1:
        raise ConfigurationError("walk_length and walks_per_node must be >= 1")
    if p <= 0 or q <= 0:
        raise ConfigurationError("walk biases p and q must be positive")
    nbrs, wts = _tables_from_graph(graph)
    n = len(nbrs)
    unbiased = p == 1.0 and q == 1.0
    children = _as_seedseq(random_state).spawn(n)
    walks = []
    for start in range(n):
        rng = np.random.default_rng(children[start])
        for _ in range(walks_per_node):
            walk = [start]
            prev, cur = -1, start
            while len(walk) < walk_length:
                nb = nbrs[cur]
                if nb.size == 0:
                    break
                w = wts[cur]
                if prev < 0 or unbiased:
                    probs = w
                else:
                    alpha = np.where(
                        nb == prev,
                        1.0 / p,
                        np.where(np.isin(nb, nbrs[prev], assume_unique=True), 1.0, 1.0 / q),
                    )
                    probs = w * alpha
                cum = np.cumsum(probs)
                k = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")),
                        nb.size - 1)
                prev, cur = cur, int(nb[k])
                walk.append(cur)
            walks.append(walk)
    return walks


# ---------------------------------------------------------------------------
# Feature treatment


@dataclass
class FeatureGraph:
    """Directed weighted graph over the distinct values of one feature.

    ``values[i]`` is the feature value represented by graph node i;
    ``weights[i]`` maps neighbour index -> co-adjacency count.
    """

    feature_name: str
    values: list
    weights: list


def discretize_feature(values, n_bins: int = 10) -> list:
    """Map continuous values to decile-style bin tokens ("q0".."q9").

    Bin edges are the empirical quantiles of ``values``; with fewer
    distinct values than bins, duplicate edges collapse and fewer
    tokens appear.
    """
    arr = np.asarray([float(v) for v in values])
    edges = np.quantile(arr, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
    idx = np.searchsorted(edges, arr, side="right")
    return [f"q{int(i)}" for i in idx]


def node_value_tokens(graph: LineGraph, feature_name: str, n_bins: int = 10) -> list:
    """Per-node tokens for one raw feature: the value itself when
    categorical, a decile token when continuous."""
    if feature_name not in graph.raw_features:
        raise ConfigurationError(f"unknown feature {feature_name!r}")
    values = graph.raw_features[feature_name]
    if graph.feature_kinds.get(feature_name) == "continuous":
        values = discretize_feature(values, n_bins)
    return [f"{feature_name}={v}" for v in values]


def build_feature_graph(graph: LineGraph, feature_name: str, tokens=None) -> FeatureGraph:
    """Co-adjacency graph over one feature's values.

    Value a connects to value b with weight = number of line-graph
    edges (i, j) where node i holds a and node j holds b (a == b gives
    self-loops). Continuous features must be discretised first (pass
    the result as ``tokens``); raw continuous input is rejected.
    """
    if tokens is None:
        if graph.feature_kinds.get(feature_name) == "continuous":
            raise ConfigurationError(
                f"feature {feature_name!r} is continuous; discretise it first"
            )
        tokens = node_value_tokens(graph, feature_name)
    index: dict = {}
    for t in tokens:
        if t not in index:
            index[t] = len(index)
    values = list(index)
    weights: list = [dict() for _ in values]
    a = sp.coo_matrix(graph.adjacency)
    for i, j in zip(a.row, a.col):
        vi, vj = index[tokens[i]], index[tokens[j]]
        weights[vi][vj] = weights[vi].get(vj, 0.0) + 1.0
    return FeatureGraph(feature_name, values, weights)


def substitute_tokens(sequences, node_tokens) -> list:
    """Replace node-index tokens with per-node feature tokens
    (the sequence treatment of features)."""
    return [[node_tokens[v] for v in seq] for seq in sequences]


# ---------------------------------------------------------------------------
# Skip-gram with negative sampling


def _scatter_update(w, idx, grads, lr):
    """w[idx] -= lr * grads, averaging duplicate indices.

    Tiny vocabularies (a feature with a handful of values) repeat the
    same row hundreds of times per minibatch; summing those stale
    gradients at full rate diverges, so duplicates contribute their
    mean instead. With unique indices this is plain SGD.
    """
    uniq, inv, cnt = np.unique(idx, return_inverse=True, return_counts=True)
    acc = np.zeros((uniq.size, w.shape[1]))
    np.add.at(acc, inv, grads)
    w[uniq] -= lr * acc / cnt[:, None]


def train_skipgram(sequences, dimensions: int = 128, window: int = 10,
                   negative: int = 5, epochs: int = 5,
                   learning_rate: float = 0.025, batch_size: int = 2048,
                   random_state=None):
    """Train skip-gram embeddings with negative sampling.

    Returns (vocab, vectors): ``vocab`` maps token -> row index into
    ``vectors`` (first-appearance order). Negatives are drawn from the
    unigram distribution raised to 3/4. Each position gets a reduced
    window drawn uniformly from [1, window]; the learning rate decays
    linearly per epoch down to 1e-4.
    """
    if window < 1 or negative < 1 or epochs < 0 or dimensions < 1:
        raise ConfigurationError("bad skip-gram hyperparameters")
    vocab: dict = {}
    for seq in sequences:
        for t in seq:
            if t not in vocab:
                vocab[t] = len(vocab)
    v_size = len(vocab)
    rng = np.random.default_rng(random_state)
    w_in = (rng.random((v_size, dimensions)) - 0.5) / dimensions
    w_out = np.zeros((v_size, dimensions))
    if v_size == 0 or epochs == 0:
        return vocab, w_in

    flat = np.concatenate([np.array([vocab[t] for t in s], dtype=np.intp)
                           for s in sequences if s])
    sid = np.concatenate([np.full(len(s), i, dtype=np.intp)
                          for i, s in enumerate(sequences) if s])
    counts = np.bincount(flat, minlength=v_size).astype(np.float64)
    table = np.cumsum(counts ** 0.75)
    table /= table[-1]

    for epoch in range(epochs):
        lr = max(1e-4, learning_rate * (1.0 - epoch / epochs))
        reduced = rng.integers(1, window + 1, size=flat.size)
        for d in range(1, window + 1):
            if d >= flat.size:
                break
            same_seq = sid[d:] == sid[:-d]
            right = same_seq & (reduced[:-d] >= d)
            left = same_seq & (reduced[d:] >= d)
            centers = np.concatenate([flat[:-d][right], flat[d:][left]])
            contexts = np.concatenate([flat[d:][right], flat[:-d][left]])
            for lo in range(0, centers.size, batch_size):
                c = centers[lo:lo + batch_size]
                o = contexts[lo:lo + batch_size]
                neg = np.searchsorted(table, rng.random((c.size, negative)))
                h = w_in[c]                        # (B, D)
                vo = w_out[o]                      # (B, D)
                vn = w_out[neg]                    # (B, K, D)
                g_pos = expit((h * vo).sum(axis=1)) - 1.0          # (B,)
                g_neg = expit(np.einsum("bd,bkd->bk", h, vn))      # (B, K)
                gh = g_pos[:, None] * vo + np.einsum("bk,bkd->bd", g_neg, vn)
                _scatter_update(w_out, o, g_pos[:, None] * h, lr)
                _scatter_update(
                    w_out, neg.ravel(),
                    (g_neg[:, :, None] * h[:, None, :]).reshape(-1, dimensions), lr,
                )
                _scatter_update(w_in, c, gh, lr)
    return vocab, w_in


# ---------------------------------------------------------------------------
# Estimators


class Node2VecEmbedding(BaseEstimator, TransformerMixin):
    """Transductive node embeddings for a line graph.

    Parameters
    ----------
    dimensions : int, default 128
        Size of the topology embedding.
    feature_dimensions : int, default 32
        Size of each per-feature embedding (appended to the topology
        part when ``include_features`` is not "none").
    walk_length, walks_per_node, window, negative_samples, epochs,
    learning_rate : skip-gram/walk hyperparameters (defaults 80, 10,
        10, 5, 5, 0.025).
    p, q : float, default 1.0
        Walk return and in-out biases.
    include_features : {"none", "sequence", "feature_graph"}
        How raw node features enter the embedding (see module docs).
    features : list of str, optional
        Which raw features to include; None means all of them.
    n_bins : int, default 10
        Decile count for continuous features.
    random_state : int, optional

    Attributes
    ----------
    embedding_ : ndarray of shape (n_nodes, total_dimensions)
    """

    def __init__(self, dimensions=128, feature_dimensions=32, walk_length=80,
                 walks_per_node=10, window=10, negative_samples=5, epochs=5,
                 learning_rate=0.025, p=1.0, q=1.0, include_features="none",
                 features=None, n_bins=10, random_state=None):
        self.dimensions = dimensions
        self.feature_dimensions = feature_dimensions
        self.walk_length = walk_length
        self.walks_per_node = walks_per_node
        self.window = window
        self.negative_samples = negative_samples
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.p = p
        self.q = q
        self.include_features = include_features
        self.features = features
        self.n_bins = n_bins
        self.random_state = random_state

    def fit(self, X, y=None):
        graph = X
        if not isinstance(graph, LineGraph):
            raise TypeError("Node2VecEmbedding.fit expects a LineGraph")
        if self.include_features not in ("none", "sequence", "feature_graph"):
            raise ConfigurationError(
                f"include_features must be none/sequence/feature_graph, "
                f"got {self.include_features!r}"
            )
        root = np.random.SeedSequence(self.random_state)
        walk_ss, train_ss, feat_ss = root.spawn(3)

        walks = random_walks(graph, self.walk_length, self.walks_per_node,
                             self.p, self.q, walk_ss)
        vocab, vectors = train_skipgram(
            walks, self.dimensions, self.window, self.negative_samples,
            self.epochs, self.learning_rate, random_state=train_ss,
        )
        parts = [np.vstack([vectors[vocab[v]] for v in range(graph.n_nodes)])]

        if self.include_features != "none":
            names = list(self.features) if self.features else list(graph.raw_features)
            for name, ss in zip(names, feat_ss.spawn(len(names)) if names else ()):
                parts.append(self._feature_part(graph, name, walks, ss))
        self.embedding_ = np.hstack(parts)
        self.n_nodes_ = graph.n_nodes
        return self

    def _feature_part(self, graph, name, topology_walks, seed_seq):
        walk_ss, train_ss = seed_seq.spawn(2)
        tokens = node_value_tokens(graph, name, self.n_bins)
        if self.include_features == "sequence":
            corpus = substitute_tokens(topology_walks, tokens)
        else:
            fg = build_feature_graph(graph, name, tokens=tokens)
            value_walks = random_walks(fg, self.walk_length, self.walks_per_node,
                                       self.p, self.q, walk_ss)
            corpus = [[fg.values[i] for i in w] for w in value_walks]
        vocab, vectors = train_skipgram(
            corpus, self.feature_dimensions, self.window, self.negative_samples,
            self.epochs, self.learning_rate, random_state=train_ss,
        )
        rows = np.zeros((graph.n_nodes, self.feature_dimensions))
        for v, tok in enumerate(tokens):
            if tok in vocab:  # a value can miss the corpus only on truncated walks
                rows[v] = vectors[vocab[tok]]
        return rows

    def transform(self, X):
        if not hasattr(self, "embedding_"):
            raise NotFittedError("Node2VecEmbedding is not fitted")
        if isinstance(X, LineGraph) and X.n_nodes != self.n_nodes_:
            raise ValueError("transform expects the graph the model was fitted on")
        return self.embedding_


class _MlpHead(BaseEstimator):
    """One hidden ReLU layer, softmax output, Adam, full-batch."""

    _task = "regression"

    def __init__(self, hidden=32, epochs=2000, learning_rate=1e-3, random_state=None):
        self.hidden = hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _fit_core(self, X, targets, out_dim):
        X = np.asarray(X, dtype=np.float64)
        rng = np.random.default_rng(self.random_state)
        w1 = nn.glorot_uniform(rng, X.shape[1], self.hidden)
        b1 = nn.zeros_param(1, self.hidden)
        # zero-initialised output layer: an untrained head predicts the
        # uniform histogram/class distribution
        w2 = nn.zeros_param(self.hidden, out_dim)
        b2 = nn.zeros_param(1, out_dim)
        params = [w1, b1, w2, b2]
        opt = nn.Adam(params, lr=self.learning_rate)
        losses = []
        for _ in range(self.epochs):
            probs = self._forward(X, params)
            if self._task == "regression":
                loss = nn.intersection_loss(probs, targets)
            else:
                loss = nn.cross_entropy_loss(probs, targets)
            nn.zero_grads(params)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        self.params_ = params
        self.loss_trace_ = losses
        self.n_features_in_ = X.shape[1]
        return self

    @staticmethod
    def _forward(X, params):
        w1, b1, w2, b2 = params
        h = nn.relu(nn.add(nn.matmul(X, w1), b1))
        return nn.softmax_rows(nn.add(nn.matmul(h, w2), b2))

    def _predict_probs(self, X):
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")
        X = np.asarray(X, dtype=np.float64)
        return self._forward(X, self.params_).value


class MlpHistogramRegressor(_MlpHead):
    """Histogram head over node embeddings (intersection loss)."""

    _task = "regression"

    def fit(self, X, y):
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[0] != np.asarray(X).shape[0]:
            raise ValueError("y must be a (n_samples, n_buckets) histogram matrix")
        return self._fit_core(X, y, y.shape[1])

    def predict(self, X):
        return self._predict_probs(X)


class MlpNodeClassifier(_MlpHead):
    """Class head over node embeddings (cross-entropy loss)."""

    _task = "classification"

    def fit(self, X, y):
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        onehot = np.zeros((y.shape[0], self.classes_.size))
        onehot[np.arange(y.size), np.searchsorted(self.classes_, y)] = 1.0
        return self._fit_core(X, onehot, self.classes_.size)

    def predict_proba(self, X):
        return self._predict_probs(X)

    def predict(self, X):
        return self.classes_[self._predict_probs(X).argmax(axis=1)]


# ---------------------------------------------------------------------------
# Embedding CSV interchange


def write_embeddings_csv(node_ids, embedding, path):
    """embeddings.csv: node_id followed by v_0..v_{d-1}."""
    import csv

    embedding = np.asarray(embedding)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["node_id"] + [f"v_{i}" for i in range(embedding.shape[1])])
        for sid, row in zip(node_ids, embedding):
            w.writerow([sid] + [repr(float(x)) for x in row])
