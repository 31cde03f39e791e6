"""Travel-speed histogram prediction on road-network line graphs.

Pipeline: build the line graph of a road network, partition it into
dense clusters, group clusters into batches, and train one
adversarially regularised graph-convolutional model per batch to
predict a speed histogram for every road segment. Walk-based
embeddings and naive mean baselines are included for comparison, plus
an experiment harness that aggregates metrics over repetitions.
"""

from .adversarial_gcn import (
    AdversarialGcnClassifier,
    AdversarialGcnCore,
    AdversarialGcnRegressor,
    load_model,
)
from .datasets import (
    GlobalMeanBaseline,
    GroupMeanBaseline,
    LabeledDataset,
    SynthConfig,
    generate_synthetic,
    load_cora,
    read_dataset_dir,
    write_dataset_dir,
)
from .errors import (
    ConfigurationError,
    DataLoadError,
    GraphStructureError,
    InsufficientDataError,
    TrainingError,
)
from .experiments import (
    ExperimentConfig,
    ExperimentReport,
    run_experiment,
    write_report,
)
from .graphs import (
    LineGraph,
    RoadNetwork,
    Segment,
    SpeedHistogram,
    bucketize,
    build_line_graph,
    normalize_adjacency,
)
from .metrics import (
    aggregate,
    bhattacharyya,
    classification_metrics,
    correlation,
    histogram_metrics,
    intersection,
    kl_divergence,
)
from .node2vec import (
    MlpHistogramRegressor,
    MlpNodeClassifier,
    Node2VecEmbedding,
    build_feature_graph,
    random_walks,
    train_skipgram,
)
from .partitioning import (
    Batch,
    GraphPartitioner,
    PartitionSet,
    edge_cut,
    form_batches,
    partition_graph,
)

__version__ = "0.1.0"

__all__ = [
    "AdversarialGcnClassifier",
    "AdversarialGcnCore",
    "AdversarialGcnRegressor",
    "Batch",
    "ConfigurationError",
    "DataLoadError",
    "ExperimentConfig",
    "ExperimentReport",
    "GlobalMeanBaseline",
    "GraphPartitioner",
    "GraphStructureError",
    "GroupMeanBaseline",
    "InsufficientDataError",
    "LabeledDataset",
    "LineGraph",
    "MlpHistogramRegressor",
    "MlpNodeClassifier",
    "Node2VecEmbedding",
    "PartitionSet",
    "RoadNetwork",
    "Segment",
    "SpeedHistogram",
    "SynthConfig",
    "TrainingError",
    "aggregate",
    "bhattacharyya",
    "bucketize",
    "build_feature_graph",
    "build_line_graph",
    "classification_metrics",
    "correlation",
    "edge_cut",
    "form_batches",
    "generate_synthetic",
    "histogram_metrics",
    "intersection",
    "kl_divergence",
    "load_cora",
    "load_model",
    "normalize_adjacency",
    "partition_graph",
    "random_walks",
    "read_dataset_dir",
    "run_experiment",
    "train_skipgram",
    "write_dataset_dir",
    "write_report",
]
