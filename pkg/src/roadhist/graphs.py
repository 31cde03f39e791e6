"""Road networks, their line graphs, and speed histograms.

A road network is a set of intersections joined by directed road
segments. The models in this package do not operate on that network
directly but on its line graph: one node per road segment, with a
directed edge from segment ``i`` to segment ``j`` whenever a vehicle
can leave ``i`` and continue onto ``j`` through a shared intersection.

Speed observations per segment are summarised into fixed-width
histograms (22 buckets of 2 m/s by default, so everything from 0 to
44 m/s; faster observations are dropped as sensor noise).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DataLoadError, GraphStructureError, InsufficientDataError

N_BUCKETS = 22
BUCKET_WIDTH = 2.0


@dataclass
class Segment:
    """A directed road segment between two intersections.

    Parameters
    ----------
    segment_id : hashable
        Unique id of the segment.
    source, target : hashable
        Intersection ids. Travel is source -> target; if ``oneway`` is
        False the segment can also be traversed target -> source.
    features : dict
        Raw attribute values (speed limit, category, length, ...).
        Encoding into the numeric feature matrix happens in
        :func:`build_line_graph`.
    oneway : bool
    """

    segment_id: object
    source: object
    target: object
    features: dict = field(default_factory=dict)
    oneway: bool = True


@dataclass
class RoadNetwork:
    """Intersections plus directed segments, with optional banned turns.

    ``turn_restrictions`` is a set of (from_segment_id, to_segment_id)
    pairs that must not become line-graph edges even though the
    segments meet at an intersection.
    """

    intersections: list
    segments: list
    turn_restrictions: set = field(default_factory=set)

    def validate(self):
        inter = set(self.intersections)
        if len(inter) != len(self.intersections):
            raise GraphStructureError("duplicate intersection ids")
        seen = set()
        for s in self.segments:
            if s.segment_id in seen:
                raise GraphStructureError(f"duplicate segment id {s.segment_id!r}")
            seen.add(s.segment_id)
            if s.source not in inter or s.target not in inter:
                raise GraphStructureError(
                    f"segment {s.segment_id!r} references a missing intersection"
                )
        return self


@dataclass
class LineGraph:
    """Line graph of a road network.

    Attributes
    ----------
    node_ids : list
        Segment id per node, index-aligned with every matrix below.
    adjacency : scipy.sparse.csr_matrix
        Directed 0/1 adjacency, shape (n_nodes, n_nodes).
    features : ndarray or scipy sparse, shape (n_nodes, n_features)
        Encoded feature matrix (one-hot categoricals, min-max scaled
        continuous columns). Large sparse datasets may keep this as
        CSR; row count always equals the node count.
    feature_names : list of str
        Column names of ``features``.
    raw_features : dict
        name -> list of raw per-node values (used by walk-based
        embeddings that need untransformed feature values).
    feature_kinds : dict
        name -> "categorical" | "continuous".
    """

    node_ids: list
    adjacency: sp.csr_matrix
    features: object
    feature_names: list
    raw_features: dict = field(default_factory=dict)
    feature_kinds: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz)

    def index_of(self, segment_id) -> int:
        try:
            return self._index[segment_id]
        except AttributeError:
            self._index = {sid: i for i, sid in enumerate(self.node_ids)}
            return self._index[segment_id]

    def validate(self):
        n = self.n_nodes
        if self.adjacency.shape != (n, n):
            raise GraphStructureError("adjacency shape does not match node count")
        if self.features.shape[0] != n:
            raise GraphStructureError("feature row count does not match node count")
        if len(set(self.node_ids)) != n:
            raise GraphStructureError("duplicate node ids")
        return self

    def subgraph_adjacency(self, node_indices) -> sp.csr_matrix:
        """Adjacency induced on ``node_indices`` (original edge set
        restricted to the chosen nodes, order preserved)."""
        idx = np.asarray(node_indices)
        return self.adjacency[idx][:, idx].tocsr()


def build_line_graph(network: RoadNetwork, categorical_features=None) -> LineGraph:
    """Construct the directed line graph of a road network.

    Nodes are road segments in their ``network.segments`` order. A
    directed edge (i, j) exists when traffic can exit segment i at some
    intersection and enter segment j there (self-loops excluded, banned
    turns respected). Two-way segments can be exited at either end and
    entered from either end.

    Parameters
    ----------
    network : RoadNetwork
    categorical_features : iterable of str, optional
        Feature names to one-hot encode. Features with string values
        are treated as categorical automatically; numeric features
        default to continuous (min-max scaled to [0, 1]).
    """
    network.validate()
    segments = network.segments
    n = len(segments)
    index = {s.segment_id: i for i, s in enumerate(segments)}

    # intersection -> segments that can be entered there / exited there
    enter_at: dict = {}
    exit_at: dict = {}
    for i, s in enumerate(segments):
        enter_at.setdefault(s.source, []).append(i)
        exit_at.setdefault(s.target, []).append(i)
        if not s.oneway:
            enter_at.setdefault(s.target, []).append(i)
            exit_at.setdefault(s.source, []).append(i)

    banned = {
        (index[a], index[b])
        for a, b in network.turn_restrictions
        if a in index and b in index
    }

    rows, cols = [], []
    seen = set()
    for inter, outs in exit_at.items():
        ins = enter_at.get(inter, ())
        for i in outs:
            for j in ins:
                if i == j or (i, j) in banned or (i, j) in seen:
                    continue
                seen.add((i, j))
                rows.append(i)
                cols.append(j)
    adjacency = sp.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n, n), dtype=np.float64
    )

    features, names, raw, kinds = _encode_features(segments, categorical_features)
    return LineGraph(
        node_ids=[s.segment_id for s in segments],
        adjacency=adjacency,
        features=features,
        feature_names=names,
        raw_features=raw,
        feature_kinds=kinds,
    ).validate()


def _encode_features(segments, categorical_features):
    """One-hot categoricals, min-max scale continuous columns."""
    declared = set(categorical_features or ())
    feature_names_raw: list = []
    for s in segments:
        for k in s.features:
            if k not in feature_names_raw:
                feature_names_raw.append(k)

    raw = {
        k: [s.features.get(k) for s in segments] for k in feature_names_raw
    }
    kinds = {}
    for k, vals in raw.items():
        if k in declared or any(isinstance(v, str) for v in vals):
            kinds[k] = "categorical"
        else:
            kinds[k] = "continuous"

    cols, names = [], []
    for k in feature_names_raw:
        vals = raw[k]
        if kinds[k] == "categorical":
            levels = sorted({v for v in vals}, key=lambda v: str(v))
            for lv in levels:
                names.append(f"{k}={lv}")
                cols.append(np.array([1.0 if v == lv else 0.0 for v in vals]))
        else:
            arr = np.array([float(v) for v in vals])
            lo, hi = arr.min(), arr.max()
            scaled = np.zeros_like(arr) if hi == lo else (arr - lo) / (hi - lo)
            names.append(k)
            cols.append(scaled)
    if cols:
        features = np.column_stack(cols)
    else:
        features = np.zeros((len(segments), 0))
    return features, names, raw, kinds


def normalize_adjacency(adjacency, symmetrize: bool = True) -> sp.csr_matrix:
    """Symmetrically normalised adjacency with self-loops.

    Computes D^{-1/2} (A + I) D^{-1/2} where D is the degree matrix of
    (A + I). With ``symmetrize`` the directed adjacency is first made
    undirected via max(A, A^T), which is what the convolution layers
    expect; pass False to normalise a directed matrix as-is.

    Accepts a LineGraph or a sparse/dense square matrix.
    """
    if isinstance(adjacency, LineGraph):
        adjacency = adjacency.adjacency
    a = sp.csr_matrix(adjacency, dtype=np.float64)
    if a.shape[0] != a.shape[1]:
        raise GraphStructureError("adjacency must be square")
    if symmetrize:
        a = a.maximum(a.T)
    a = a + sp.identity(a.shape[0], format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        dinv = 1.0 / np.sqrt(deg)
    dinv[~np.isfinite(dinv)] = 0.0
    d = sp.diags(dinv)
    return (d @ a @ d).tocsr()


@dataclass(frozen=True)
class SpeedHistogram:
    """A normalised travel-speed histogram.

    ``buckets[i]`` is the fraction of retained observations with speed
    in [i * bucket_width, (i+1) * bucket_width).
    """

    buckets: np.ndarray
    bucket_width: float = BUCKET_WIDTH

    def __post_init__(self):
        b = np.asarray(self.buckets, dtype=np.float64)
        object.__setattr__(self, "buckets", b)
        if b.ndim != 1:
            raise ValueError("histogram buckets must be a 1-d vector")
        if (b < 0).any():
            raise ValueError("histogram buckets must be non-negative")
        if abs(b.sum() - 1.0) > 1e-9:
            raise ValueError(f"histogram buckets sum to {b.sum()!r}, expected 1")

    @property
    def n_buckets(self) -> int:
        return self.buckets.shape[0]

    def mean(self) -> float:
        """Mean speed implied by the histogram (bucket centres)."""
        centres = (np.arange(self.n_buckets) + 0.5) * self.bucket_width
        return float(self.buckets @ centres)


def bucketize(
    speeds, n_buckets: int = N_BUCKETS, bucket_width: float = BUCKET_WIDTH
) -> SpeedHistogram:
    """Summarise raw speed observations into a normalised histogram.

    Observations at or above ``n_buckets * bucket_width`` (and the
    physically impossible negatives) are discarded, not clamped. The
    remaining counts are divided by the number of retained
    observations, so the buckets sum to one.

    Raises
    ------
    InsufficientDataError
        If no observation survives the range filter.
    """
    s = np.asarray(speeds, dtype=np.float64).ravel()
    if n_buckets < 1 or bucket_width <= 0:
        raise ValueError("need n_buckets >= 1 and bucket_width > 0")
    kept = s[(s >= 0.0) & (s < n_buckets * bucket_width)]
    if kept.size == 0:
        raise InsufficientDataError(
            "no observations inside the histogram range"
        )
    idx = np.floor(kept / bucket_width).astype(np.intp)
    counts = np.bincount(idx, minlength=n_buckets).astype(np.float64)
    return SpeedHistogram(counts / kept.size, bucket_width)


# ---------------------------------------------------------------------------
# CSV interchange


def write_segments_csv(network: RoadNetwork, path):
    """Write segments.csv: segment_id, from, to, oneway, then one
    column per raw feature (column order = first-seen order)."""
    feature_names: list = []
    for s in network.segments:
        for k in s.features:
            if k not in feature_names:
                feature_names.append(k)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["segment_id", "from", "to", "oneway"] + feature_names)
        for s in network.segments:
            w.writerow(
                [s.segment_id, s.source, s.target, int(s.oneway)]
                + [s.features.get(k, "") for k in feature_names]
            )


def read_segments_csv(path, categorical_columns=("speed_limit", "category")):
    """Read segments.csv back into a RoadNetwork.

    Numeric-looking cells are parsed as floats unless their column is
    listed in ``categorical_columns`` (those stay strings so one-hot
    encoding is stable across files).
    """
    categorical = set(categorical_columns)
    segments = []
    intersections: dict = {}
    try:
        f = open(path, newline="")
    except OSError as e:
        raise DataLoadError(f"cannot open segments file: {e}") from e
    with f:
        reader = csv.DictReader(f)
        required = {"segment_id", "from", "to"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataLoadError(
                f"{path}: expected columns segment_id,from,to[,oneway,...]"
            )
        feature_cols = [
            c for c in reader.fieldnames if c not in required and c != "oneway"
        ]
        for row in reader:
            feats = {}
            for c in feature_cols:
                v = row[c]
                if c in categorical:
                    feats[c] = v
                else:
                    try:
                        feats[c] = float(v)
                    except ValueError:
                        feats[c] = v
            oneway = row.get("oneway", "1")
            segments.append(
                Segment(
                    segment_id=row["segment_id"],
                    source=row["from"],
                    target=row["to"],
                    features=feats,
                    oneway=oneway not in ("0", "false", "False"),
                )
            )
            intersections[row["from"]] = None
            intersections[row["to"]] = None
    return RoadNetwork(list(intersections), segments).validate()


def write_observations_csv(observations: dict, path):
    """observations.csv: one (segment_id, speed_mps) row per reading."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["segment_id", "speed_mps"])
        for sid, speeds in observations.items():
            for v in np.asarray(speeds).ravel():
                w.writerow([sid, repr(float(v))])


def read_observations_csv(path) -> dict:
    """Read observations.csv into {segment_id: ndarray of speeds}."""
    out: dict = {}
    try:
        f = open(path, newline="")
    except OSError as e:
        raise DataLoadError(f"cannot open observations file: {e}") from e
    with f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "segment_id" not in reader.fieldnames:
            raise DataLoadError(f"{path}: expected columns segment_id,speed_mps")
        for row in reader:
            try:
                out.setdefault(row["segment_id"], []).append(float(row["speed_mps"]))
            except (KeyError, TypeError, ValueError) as e:
                raise DataLoadError(f"{path}: bad observation row {row!r}") from e
    return {k: np.asarray(v) for k, v in out.items()}


def write_labels_csv(node_ids, labels, path, mask=None):
    """labels.csv: segment_id followed by b_0..b_{k-1} histogram columns."""
    labels = np.asarray(labels, dtype=np.float64)
    k = labels.shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["segment_id"] + [f"b_{i}" for i in range(k)])
        for i, sid in enumerate(node_ids):
            if mask is not None and not mask[i]:
                continue
            w.writerow([sid] + [repr(float(v)) for v in labels[i]])


def read_labels_csv(path) -> dict:
    """Read labels.csv into {segment_id: histogram row ndarray}."""
    out = {}
    try:
        f = open(path, newline="")
    except OSError as e:
        raise DataLoadError(f"cannot open labels file: {e}") from e
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "segment_id":
            raise DataLoadError(f"{path}: expected header segment_id,b_0,...")
        k = len(header) - 1
        for row in reader:
            if len(row) != k + 1:
                raise DataLoadError(f"{path}: row length mismatch: {row!r}")
            out[row[0]] = np.array([float(v) for v in row[1:]])
    return out
