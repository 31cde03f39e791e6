"""Datasets: a synthetic road-network generator, a citation-network
loader, naive histogram baselines, and CSV round-trips.

The synthetic generator lays out a grid city: every row and column of
intersections is a street line with a category (highway / arterial /
local) and a per-line speed limit from a km/h palette. Actual speeds
are drawn around limit * congestion, where congestion is a spatially
smoothed random field, so nearby segments behave alike (which is what
makes topology-aware models worth their keep). Segments come in
directed pairs, one per driving direction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import uniform_filter
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import DataLoadError, InsufficientDataError
from .graphs import (
    BUCKET_WIDTH,
    N_BUCKETS,
    LineGraph,
    RoadNetwork,
    Segment,
    bucketize,
    build_line_graph,
    read_labels_csv,
    read_observations_csv,
    read_segments_csv,
    write_labels_csv,
    write_observations_csv,
    write_segments_csv,
)

CATEGORICAL_FEATURES = ("speed_limit", "category")
KMH_PALETTE = (30, 50, 60, 80, 90, 110, 130)


@dataclass
class LabeledDataset:
    """A graph plus node labels and the masks the harness needs.

    For regression, ``labels`` is an (n_nodes, n_buckets) histogram
    matrix with all-zero rows outside ``labeled_mask``. For
    classification it is an integer class vector. Fixed train/val/test
    masks are only set for classification datasets; regression splits
    are drawn per repetition by the harness.
    """

    graph: LineGraph
    task: str
    labels: np.ndarray
    labeled_mask: np.ndarray
    train_mask: np.ndarray = None
    val_mask: np.ndarray = None
    test_mask: np.ndarray = None
    n_classes: int = None
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes


@dataclass
class SynthConfig:
    grid_rows: int = 23
    grid_cols: int = 23
    labeled_fraction: float = 0.6
    min_observations: int = 50
    max_observations: int = 200
    speed_sd_factor: float = 0.12
    congestion_low: float = 0.45
    congestion_high: float = 0.95
    congestion_noise: float = 0.05
    n_buckets: int = N_BUCKETS
    bucket_width: float = BUCKET_WIDTH


def _line_category(index: int) -> str:
    if index % 6 == 0:
        return "highway"
    if index % 2 == 0:
        return "arterial"
    return "local"


_CATEGORY_LIMITS = {
    "highway": (90, 110, 130),
    "arterial": (60, 80),
    "local": (30, 50),
}


def generate_synthetic(config: SynthConfig = None, seed=None):
    """Generate a grid road network with speed observations.

    Returns (dataset, network, observations): the LabeledDataset built
    on the line graph, the RoadNetwork itself, and the raw
    {segment_id: speeds} observation dict. ``dataset.meta`` carries the
    configured per-segment true mean speeds for statistical checks.
    """
    cfg = config or SynthConfig()
    rng = np.random.default_rng(seed)
    R, C = cfg.grid_rows, cfg.grid_cols
    if R < 2 or C < 2:
        raise ValueError("grid must be at least 2x2")

    inter = [f"n{r}_{c}" for r in range(R) for c in range(C)]

    row_limit = {r: rng.choice(_CATEGORY_LIMITS[_line_category(r)]) for r in range(R)}
    col_limit = {c: rng.choice(_CATEGORY_LIMITS[_line_category(c)]) for c in range(C)}

    # smooth random congestion field over the intersection grid
    noise = rng.random((R, C))
    smooth = uniform_filter(noise, size=5, mode="nearest")
    lo, hi = smooth.min(), smooth.max()
    unit = (smooth - lo) / (hi - lo) if hi > lo else np.full_like(smooth, 0.5)
    congestion = cfg.congestion_low + unit * (cfg.congestion_high - cfg.congestion_low)

    segments = []
    true_mean = []

    def add_pair(a, b, limit_kmh, category, factor):
        length = float(90.0 + 20.0 * rng.random())
        mean_mps = (limit_kmh / 3.6) * factor
        for src, dst in ((a, b), (b, a)):
            proxy = float(np.clip(factor + rng.normal(0.0, cfg.congestion_noise), 0.0, 1.0))
            segments.append(
                Segment(
                    segment_id=f"s{len(segments)}",
                    source=src,
                    target=dst,
                    features={
                        "speed_limit": str(int(limit_kmh)),
                        "category": category,
                        "length": length,
                        "congestion": proxy,
                    },
                )
            )
            true_mean.append(mean_mps)

    for r in range(R):
        for c in range(C - 1):
            factor = float((congestion[r, c] + congestion[r, c + 1]) / 2.0)
            add_pair(f"n{r}_{c}", f"n{r}_{c + 1}", row_limit[r], _line_category(r), factor)
    for c in range(C):
        for r in range(R - 1):
            factor = float((congestion[r, c] + congestion[r + 1, c]) / 2.0)
            add_pair(f"n{r}_{c}", f"n{r + 1}_{c}", col_limit[c], _line_category(c), factor)

    network = RoadNetwork(inter, segments).validate()
    graph = build_line_graph(network, categorical_features=CATEGORICAL_FEATURES)

    n = len(segments)
    true_mean = np.asarray(true_mean)
    labeled = rng.random(n) < cfg.labeled_fraction
    observations = {}
    labels = np.zeros((n, cfg.n_buckets))
    labeled_mask = np.zeros(n, dtype=bool)
    for i, seg in enumerate(segments):
        if labeled[i]:
            count = int(rng.integers(cfg.min_observations, cfg.max_observations + 1))
        else:
            count = int(rng.integers(0, cfg.min_observations))
        if count == 0:
            continue
        sd = max(0.8, cfg.speed_sd_factor * true_mean[i])
        speeds = rng.normal(true_mean[i], sd, size=count)
        observations[seg.segment_id] = speeds
        if count >= cfg.min_observations:
            try:
                hist = bucketize(speeds, cfg.n_buckets, cfg.bucket_width)
            except InsufficientDataError:
                continue
            labels[i] = hist.buckets
            labeled_mask[i] = True

    dataset = LabeledDataset(
        graph=graph,
        task="regression",
        labels=labels,
        labeled_mask=labeled_mask,
        meta={
            "true_mean_speeds": true_mean,
            "grid": (R, C),
            "labeled_count": int(labeled_mask.sum()),
            "min_observations": cfg.min_observations,
        },
    )
    return dataset, network, observations


# ---------------------------------------------------------------------------
# Dataset directory round-trip


def write_dataset_dir(dirpath, network, observations, dataset):
    os.makedirs(dirpath, exist_ok=True)
    write_segments_csv(network, os.path.join(dirpath, "segments.csv"))
    write_observations_csv(observations, os.path.join(dirpath, "observations.csv"))
    write_labels_csv(dataset.graph.node_ids, dataset.labels,
                     os.path.join(dirpath, "labels.csv"), mask=dataset.labeled_mask)
    meta = {k: v for k, v in dataset.meta.items() if not isinstance(v, np.ndarray)}
    meta["n_buckets"] = int(dataset.labels.shape[1])
    with open(os.path.join(dirpath, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, default=str)


def read_dataset_dir(dirpath, min_observations: int = 50) -> LabeledDataset:
    """Rebuild a regression dataset from a directory of CSV files.

    labels.csv is preferred when present; otherwise labels are derived
    from observations.csv for segments with at least
    ``min_observations`` readings.
    """
    seg_path = os.path.join(dirpath, "segments.csv")
    if not os.path.exists(seg_path):
        raise DataLoadError(f"no segments.csv in {dirpath}")
    network = read_segments_csv(seg_path, categorical_columns=CATEGORICAL_FEATURES)
    graph = build_line_graph(network, categorical_features=CATEGORICAL_FEATURES)
    n = graph.n_nodes

    labels_path = os.path.join(dirpath, "labels.csv")
    obs_path = os.path.join(dirpath, "observations.csv")
    labels = None
    if os.path.exists(labels_path):
        rows = read_labels_csv(labels_path)
        if rows:
            k = len(next(iter(rows.values())))
            labels = np.zeros((n, k))
            mask = np.zeros(n, dtype=bool)
            for sid, hist in rows.items():
                i = graph.index_of(sid)
                labels[i] = hist
                mask[i] = True
    if labels is None:
        if not os.path.exists(obs_path):
            raise DataLoadError(f"{dirpath} has neither labels.csv nor observations.csv")
        obs = read_observations_csv(obs_path)
        labels = np.zeros((n, N_BUCKETS))
        mask = np.zeros(n, dtype=bool)
        for sid, speeds in obs.items():
            if speeds.size >= min_observations:
                i = graph.index_of(sid)
                try:
                    labels[i] = bucketize(speeds).buckets
                except InsufficientDataError:
                    continue
                mask[i] = True

    meta = {}
    meta_path = os.path.join(dirpath, "meta.json")
    if os.path.exists(meta_path):
        with open(meta_path) as f:
            meta = json.load(f)
    return LabeledDataset(
        graph=graph, task="regression", labels=labels,
        labeled_mask=mask, meta=meta,
    )


# ---------------------------------------------------------------------------
# Citation network


def load_cora(content_path, cites_path, n_train_per_class: int = 20,
              n_val: int = 500, n_test: int = 1000, split_seed=0) -> LabeledDataset:
    """Load the standard citation-network files.

    ``.content`` rows are: paper_id, binary word features, class name;
    node order follows file order. ``.cites`` rows are
    "cited citing" pairs; the adjacency is symmetrised for the models,
    and the raw (directed) citation count is kept in ``meta``.

    The split is random but seeded: ``n_train_per_class`` training
    nodes per class, then ``n_val`` validation and ``n_test`` test
    nodes from the remainder.
    """
    ids, rows, labels_raw = [], [], []
    try:
        f = open(content_path)
    except OSError as e:
        raise DataLoadError(f"cannot open content file: {e}") from e
    with f:
        for line in f:
            parts = line.strip().split()
            if not parts:
                continue
            if len(parts) < 3:
                raise DataLoadError(f"{content_path}: short row {line!r}")
            ids.append(parts[0])
            rows.append(np.array(parts[1:-1], dtype=np.float64))
            labels_raw.append(parts[-1])
    if not ids:
        raise DataLoadError(f"{content_path}: no rows")
    n = len(ids)
    index = {pid: i for i, pid in enumerate(ids)}
    if len(index) != n:
        raise DataLoadError(f"{content_path}: duplicate paper ids")
    features = sp.csr_matrix(np.vstack(rows))

    classes = sorted(set(labels_raw))
    labels = np.array([classes.index(c) for c in labels_raw], dtype=np.intp)

    raw_edges = 0
    r, c = [], []
    try:
        f = open(cites_path)
    except OSError as e:
        raise DataLoadError(f"cannot open cites file: {e}") from e
    with f:
        for line in f:
            parts = line.strip().split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DataLoadError(f"{cites_path}: bad row {line!r}")
            cited, citing = parts
            if cited not in index or citing not in index:
                raise DataLoadError(f"{cites_path}: unknown paper id in {line!r}")
            raw_edges += 1
            if cited != citing:
                r.append(index[citing])
                c.append(index[cited])
    adj = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    adj = adj.maximum(adj.T)
    adj.data[:] = 1.0

    rng = np.random.default_rng(split_seed)
    train_mask = np.zeros(n, dtype=bool)
    for k in range(len(classes)):
        members = np.flatnonzero(labels == k)
        if members.size < n_train_per_class:
            raise DataLoadError(f"class {classes[k]!r} has only {members.size} nodes")
        train_mask[rng.choice(members, size=n_train_per_class, replace=False)] = True
    pool = rng.permutation(np.flatnonzero(~train_mask))
    if pool.size < n_val + n_test:
        raise DataLoadError("not enough nodes left for validation + test")
    val_mask = np.zeros(n, dtype=bool)
    test_mask = np.zeros(n, dtype=bool)
    val_mask[pool[:n_val]] = True
    test_mask[pool[n_val:n_val + n_test]] = True

    graph = LineGraph(
        node_ids=ids,
        adjacency=adj,
        features=features,
        feature_names=[f"w_{i}" for i in range(features.shape[1])],
    )
    return LabeledDataset(
        graph=graph,
        task="classification",
        labels=labels,
        labeled_mask=np.ones(n, dtype=bool),
        train_mask=train_mask,
        val_mask=val_mask,
        test_mask=test_mask,
        n_classes=len(classes),
        meta={"classes": classes, "n_raw_citations": raw_edges,
              "n_undirected_edges": int(adj.nnz // 2)},
    )


def find_cora(base_dir=None):
    """Locate cora.content/cora.cites via ROADHIST_CORA_DIR, a given
    base directory, or ./data/cora. Returns (content, cites) paths or
    None when the files are absent."""
    candidates = []
    if base_dir:
        candidates.append(base_dir)
    env = os.environ.get("ROADHIST_CORA_DIR")
    if env:
        candidates.append(env)
    candidates.append(os.path.join(os.getcwd(), "data", "cora"))
    for d in candidates:
        content = os.path.join(d, "cora.content")
        cites = os.path.join(d, "cora.cites")
        if os.path.exists(content) and os.path.exists(cites):
            return content, cites
    return None


# ---------------------------------------------------------------------------
# Naive baselines


class GlobalMeanBaseline(BaseEstimator):
    """Predicts the renormalised mean of the training histograms for
    every node."""

    def fit(self, X, y):
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[0] == 0:
            raise InsufficientDataError("need at least one training histogram")
        mean = y.mean(axis=0)
        self.histogram_ = mean / mean.sum()
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "histogram_"):
            raise NotFittedError("GlobalMeanBaseline is not fitted")
        n = X if isinstance(X, (int, np.integer)) else np.asarray(X).shape[0]
        return np.tile(self.histogram_, (int(n), 1))


class GroupMeanBaseline(BaseEstimator):
    """Predicts the renormalised mean histogram of the node's group
    (e.g. its speed limit), falling back to the global mean for groups
    unseen in training.

    ``X`` is the per-node group key array (any hashable values).
    """

    def fit(self, X, y):
        keys = np.asarray(X)
        y = np.asarray(y, dtype=np.float64)
        if keys.shape[0] != y.shape[0]:
            raise ValueError("X and y row counts differ")
        if y.shape[0] == 0:
            raise InsufficientDataError("need at least one training histogram")
        global_mean = y.mean(axis=0)
        self.global_histogram_ = global_mean / global_mean.sum()
        self.group_histograms_ = {}
        for key in np.unique(keys):
            mean = y[keys == key].mean(axis=0)
            self.group_histograms_[key] = mean / mean.sum()
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "group_histograms_"):
            raise NotFittedError("GroupMeanBaseline is not fitted")
        keys = np.asarray(X)
        return np.vstack([
            self.group_histograms_.get(k, self.global_histogram_) for k in keys
        ])
