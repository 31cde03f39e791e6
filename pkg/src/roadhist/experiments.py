"""Experiment harness: partition, batch, train, evaluate, repeat.

One experiment = one model trained under one configuration for
``repetitions`` independent repetitions. Partitioned models (the GCN
family) train one model per batch and pool per-node test metrics over
all batches; embedding and naive baselines train once per repetition
on a global split.

Seeding: every random decision draws from a seed derived as
``SeedSequence(master_seed, spawn_key=(rep, purpose, batch))`` where
purpose is one of partition/batch-shuffle/split/model/embedding.
Because streams are keyed rather than consumed in sequence, changing
the batch count never perturbs the other batches' draws, and reruns
with the same master seed reproduce every reported metric exactly.

Parallelism: per-batch training jobs go through the same worker
function whether they run in-process or in a process pool, so parallel
and sequential runs return bit-identical per-batch results. Wall-clock
and peak-memory figures are measurements, not outputs, and are the
only report fields allowed to differ.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
import tracemalloc
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adversarial_gcn import AdversarialGcnClassifier, AdversarialGcnRegressor
from .datasets import GlobalMeanBaseline, GroupMeanBaseline, LabeledDataset
from .errors import ConfigurationError, InsufficientDataError
from .metrics import (
    classification_metrics,
    histogram_metrics_rows,
    write_report_csv,
)
from .node2vec import MlpHistogramRegressor, MlpNodeClassifier, Node2VecEmbedding
from .partitioning import form_batches, partition_graph

GCN_MODELS = ("full-gcn", "gcn-no-adv")
EMBED_MODELS = {
    "n2v-base": "none",
    "n2v-sequence": "sequence",
    "n2v-feature-graph": "feature_graph",
}
NAIVE_MODELS = ("naive-global", "naive-limit")
ALL_MODELS = GCN_MODELS + tuple(EMBED_MODELS) + NAIVE_MODELS

PURPOSE_PARTITION = 0
PURPOSE_BATCHES = 1
PURPOSE_SPLIT = 2
PURPOSE_MODEL = 3
PURPOSE_EMBED = 4


def derive_seed(master_seed, rep: int, purpose: int, batch: int = 0) -> int:
    """Collision-resistant integer seed for one (rep, purpose, batch)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(rep, purpose, batch))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class ExperimentConfig:
    """Knobs for one experiment run.

    ``epochs=None`` keeps each model's own default. ``model_params``,
    ``embed_params`` and ``head_params`` pass extra constructor
    arguments to the GCN estimators, the embedding, and the MLP heads.
    """

    model: str = "full-gcn"
    n_clusters: int = 100
    n_batches: int = 10
    repetitions: int = 1
    epochs: int = None
    master_seed: int = 0
    parallel: int = 1
    imbalance: float = 1.03
    train_fraction: float = 2.0 / 3.0
    model_params: dict = field(default_factory=dict)
    embed_params: dict = field(default_factory=dict)
    head_params: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    model: str
    task: str
    n_repetitions: int
    config: dict
    metrics: dict
    per_rep_means: list
    per_rep_medians: list
    timings: dict
    peak_memory_bytes: int
    skipped_batches: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return str(obj)


def write_report(report: ExperimentReport, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")
    write_report_csv(report.metrics, os.path.join(out_dir, "report.csv"))


# ---------------------------------------------------------------------------
# Per-batch worker (shared by sequential and parallel execution)


def _train_eval_batch(payload: dict) -> dict:
    was_tracing = tracemalloc.is_tracing()
    if was_tracing:
        tracemalloc.reset_peak()
    else:
        tracemalloc.start()

    task = payload["task"]
    kwargs = dict(payload["model_params"])
    if payload["epochs"] is not None:
        kwargs["epochs"] = payload["epochs"]
    cls = AdversarialGcnRegressor if task == "regression" else AdversarialGcnClassifier
    est = cls(adversarial=payload["model"] == "full-gcn",
              random_state=payload["seed"], **kwargs)

    graphlike = (payload["adjacency"], payload["features"])
    n = payload["adjacency"].shape[0]
    train_mask = np.zeros(n, dtype=bool)
    train_mask[payload["train_idx"]] = True

    t0 = time.perf_counter()
    if task == "regression":
        est.fit(graphlike, payload["labels"], train_mask)
    else:
        est.fit(graphlike, payload["labels"], train_mask, classes=payload["classes"])
    seconds = time.perf_counter() - t0

    test_idx = payload["test_idx"]
    out = {
        "batch_index": payload["batch_index"],
        "test_global": payload["test_global"],
        "n_train": int(payload["train_idx"].size),
        "seconds": seconds,
    }
    if task == "regression":
        probs = est.predict(graphlike)[test_idx]
        out["metric_rows"] = histogram_metrics_rows(probs, payload["labels"][test_idx])
        out["predictions"] = probs
    else:
        out["probs"] = est.predict_proba(graphlike)[test_idx]

    if payload.get("checkpoint_path"):
        est.save(payload["checkpoint_path"])
    if payload.get("trace_path"):
        est.save_loss_trace(payload["trace_path"])

    out["peak_bytes"] = tracemalloc.get_traced_memory()[1]
    if not was_tracing:
        tracemalloc.stop()
    return out


def _make_payloads(dataset: LabeledDataset, config: ExperimentConfig, rep: int,
                   checkpoint_dir=None):
    graph = dataset.graph
    master = config.master_seed

    t0 = time.perf_counter()
    partition = partition_graph(
        graph, config.n_clusters, config.imbalance,
        derive_seed(master, rep, PURPOSE_PARTITION),
    )
    partition_seconds = time.perf_counter() - t0

    extra = {}
    if dataset.task == "classification":
        extra = {"train": dataset.train_mask, "test": dataset.test_mask}
    batches = form_batches(
        graph, partition, config.n_batches,
        derive_seed(master, rep, PURPOSE_BATCHES),
        labels=dataset.labels, mask=dataset.labeled_mask, extra_masks=extra,
    )

    payloads = []
    skipped = 0
    for b, batch in enumerate(batches):
        if dataset.task == "regression":
            labeled_local = np.flatnonzero(batch.mask)
            if labeled_local.size == 0:
                skipped += 1
                continue
            rng = np.random.default_rng(derive_seed(master, rep, PURPOSE_SPLIT, b))
            perm = rng.permutation(labeled_local)
            n_train = min(labeled_local.size,
                          max(1, int(round(labeled_local.size * config.train_fraction))))
            train_idx = np.sort(perm[:n_train])
            test_idx = np.sort(perm[n_train:])
            classes = None
        else:
            train_idx = np.flatnonzero(batch.extra_masks["train"])
            test_idx = np.flatnonzero(batch.extra_masks["test"])
            if train_idx.size == 0:
                skipped += 1
                continue
            classes = np.arange(dataset.n_classes)
        payload = {
            "batch_index": b,
            "model": config.model,
            "task": dataset.task,
            "adjacency": batch.adjacency,
            "features": batch.features,
            "labels": batch.labels,
            "train_idx": train_idx,
            "test_idx": test_idx,
            "test_global": batch.node_indices[test_idx],
            "classes": classes,
            "seed": derive_seed(master, rep, PURPOSE_MODEL, b),
            "epochs": config.epochs,
            "model_params": config.model_params,
        }
        if checkpoint_dir is not None:
            payload["checkpoint_path"] = os.path.join(
                checkpoint_dir, f"rep{rep}_batch{b}.npz")
            payload["trace_path"] = os.path.join(
                checkpoint_dir, f"rep{rep}_batch{b}_losses.csv")
        payloads.append(payload)
    return payloads, partition_seconds, skipped


# ---------------------------------------------------------------------------
# Per-repetition runners


def _rep_partitioned(dataset, config, rep, executor, checkpoint_dir):
    payloads, partition_seconds, skipped = _make_payloads(
        dataset, config, rep, checkpoint_dir)
    if not payloads:
        raise InsufficientDataError("every batch was skipped (no labeled nodes)")
    if executor is not None:
        results = list(executor.map(_train_eval_batch, payloads))
    else:
        results = [_train_eval_batch(p) for p in payloads]

    timing = {
        "partition_seconds": partition_seconds,
        "batch_seconds": [r["seconds"] for r in results],
    }
    peak = max(r["peak_bytes"] for r in results)

    if dataset.task == "regression":
        pooled = {
            name: np.concatenate([r["metric_rows"][name] for r in results])
            for name in results[0]["metric_rows"]
        }
        n_test = next(iter(pooled.values())).size
        if n_test == 0:
            raise InsufficientDataError("no test nodes across batches")
        mean_rec = {k: float(v.mean()) for k, v in pooled.items()}
        median_rec = {k: float(np.median(v)) for k, v in pooled.items()}
    else:
        probs = np.vstack([r["probs"] for r in results])
        test_global = np.concatenate([r["test_global"] for r in results])
        if test_global.size == 0:
            raise InsufficientDataError("no test nodes across batches")
        truth = np.asarray(dataset.labels)[test_global]
        mean_rec = classification_metrics(probs, truth, dataset.n_classes)
        median_rec = dict(mean_rec)
    return mean_rec, median_rec, timing, peak, skipped


def _global_split(dataset, config, rep):
    if dataset.task == "classification":
        return np.flatnonzero(dataset.train_mask), np.flatnonzero(dataset.test_mask)
    labeled = np.flatnonzero(dataset.labeled_mask)
    if labeled.size < 2:
        raise InsufficientDataError("need at least two labeled nodes")
    rng = np.random.default_rng(
        derive_seed(config.master_seed, rep, PURPOSE_SPLIT))
    perm = rng.permutation(labeled)
    n_train = min(labeled.size - 1,
                  max(1, int(round(labeled.size * config.train_fraction))))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _rep_global(dataset, config, rep):
    was_tracing = tracemalloc.is_tracing()
    if was_tracing:
        tracemalloc.reset_peak()
    else:
        tracemalloc.start()
    graph = dataset.graph
    train_idx, test_idx = _global_split(dataset, config, rep)
    y = np.asarray(dataset.labels)
    timing = {"partition_seconds": 0.0}

    if config.model in EMBED_MODELS:
        t0 = time.perf_counter()
        embedder = Node2VecEmbedding(
            include_features=EMBED_MODELS[config.model],
            random_state=derive_seed(config.master_seed, rep, PURPOSE_EMBED),
            **config.embed_params,
        )
        emb = embedder.fit(graph).embedding_
        timing["embed_seconds"] = time.perf_counter() - t0
        head_kwargs = dict(config.head_params)
        if config.epochs is not None:
            head_kwargs["epochs"] = config.epochs
        head_cls = (MlpHistogramRegressor if dataset.task == "regression"
                    else MlpNodeClassifier)
        head = head_cls(random_state=derive_seed(config.master_seed, rep,
                                                 PURPOSE_MODEL), **head_kwargs)
        t0 = time.perf_counter()
        head.fit(emb[train_idx], y[train_idx])
        timing["batch_seconds"] = [time.perf_counter() - t0]
        if dataset.task == "regression":
            preds = head.predict(emb[test_idx])
        else:
            probs = head.predict_proba(emb[test_idx])
    elif config.model in NAIVE_MODELS:
        if dataset.task != "regression":
            raise ConfigurationError(
                f"{config.model} only applies to histogram regression")
        t0 = time.perf_counter()
        if config.model == "naive-global":
            est = GlobalMeanBaseline().fit(None, y[train_idx])
            preds = est.predict(test_idx.size)
        else:
            if "speed_limit" not in graph.raw_features:
                raise ConfigurationError(
                    "naive-limit needs a raw speed_limit feature")
            keys = np.asarray(graph.raw_features["speed_limit"])
            est = GroupMeanBaseline().fit(keys[train_idx], y[train_idx])
            preds = est.predict(keys[test_idx])
        timing["batch_seconds"] = [time.perf_counter() - t0]
    else:
        raise ConfigurationError(f"unknown model {config.model!r}")

    if dataset.task == "regression":
        rows = histogram_metrics_rows(preds, y[test_idx])
        mean_rec = {k: float(v.mean()) for k, v in rows.items()}
        median_rec = {k: float(np.median(v)) for k, v in rows.items()}
    else:
        head_classes = np.asarray(head.classes_)
        truth_idx = np.searchsorted(head_classes, y[test_idx])
        mean_rec = classification_metrics(probs, truth_idx, head_classes.size)
        median_rec = dict(mean_rec)

    peak = tracemalloc.get_traced_memory()[1]
    if not was_tracing:
        tracemalloc.stop()
    return mean_rec, median_rec, timing, peak, 0


# ---------------------------------------------------------------------------
# Entry point


def _validate(dataset, config):
    if config.model not in ALL_MODELS:
        raise ConfigurationError(
            f"unknown model {config.model!r}; choose one of {sorted(ALL_MODELS)}")
    if config.repetitions < 1:
        raise ConfigurationError("repetitions must be >= 1")
    if config.parallel < 1:
        raise ConfigurationError("parallel must be >= 1")
    if not 0.0 < config.train_fraction < 1.0:
        raise ConfigurationError("train_fraction must be in (0, 1)")
    if dataset.task not in ("regression", "classification"):
        raise ConfigurationError(f"unknown task {dataset.task!r}")


def run_experiment(dataset: LabeledDataset, config: ExperimentConfig,
                   checkpoint_dir=None) -> ExperimentReport:
    """Run one experiment and aggregate metrics across repetitions.

    For regression, each repetition records the mean and the median of
    every per-node metric over the pooled test nodes; the report's
    ``mean``/``sem`` aggregate the per-rep means and ``median`` is the
    average of the per-rep medians. Classification metrics are
    set-level (accuracy, macro F1, ROC AUC), so the median column
    simply mirrors them per repetition.

    With ``checkpoint_dir`` set, partitioned models write one .npz
    checkpoint and one loss-trace CSV per (rep, batch).
    """
    _validate(dataset, config)
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)

    executor = None
    if config.parallel > 1 and config.model in GCN_MODELS:
        executor = ProcessPoolExecutor(max_workers=config.parallel)
    mean_records, median_records = [], []
    timings = {"partition_seconds": [], "batch_seconds": [], "embed_seconds": []}
    peak = 0
    skipped = 0
    t_start = time.perf_counter()
    try:
        for rep in range(config.repetitions):
            if config.model in GCN_MODELS:
                rec, med, timing, rep_peak, rep_skip = _rep_partitioned(
                    dataset, config, rep, executor, checkpoint_dir)
            else:
                rec, med, timing, rep_peak, rep_skip = _rep_global(
                    dataset, config, rep)
            mean_records.append(rec)
            median_records.append(med)
            timings["partition_seconds"].append(timing.get("partition_seconds", 0.0))
            timings["batch_seconds"].append(timing.get("batch_seconds", []))
            if "embed_seconds" in timing:
                timings["embed_seconds"].append(timing["embed_seconds"])
            peak = max(peak, rep_peak)
            skipped += rep_skip
    finally:
        if executor is not None:
            executor.shutdown()
    timings["total_seconds"] = time.perf_counter() - t_start

    metrics_out = {}
    for name in mean_records[0]:
        vals = np.array([r[name] for r in mean_records])
        meds = np.array([r[name] for r in median_records])
        metrics_out[name] = {
            "mean": float(vals.mean()),
            "median": float(meds.mean()),
            "sem": float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0,
        }

    return ExperimentReport(
        model=config.model,
        task=dataset.task,
        n_repetitions=config.repetitions,
        config=dataclasses.asdict(config),
        metrics=metrics_out,
        per_rep_means=mean_records,
        per_rep_medians=median_records,
        timings=timings,
        peak_memory_bytes=int(peak),
        skipped_batches=skipped,
    )


def evaluate_model(estimator, dataset: LabeledDataset) -> dict:
    """Evaluate a fitted GCN estimator over a whole dataset's labeled
    nodes; returns {metric: value}."""
    if dataset.task == "regression":
        preds = estimator.predict(dataset.graph)
        rows = histogram_metrics_rows(
            preds[dataset.labeled_mask],
            np.asarray(dataset.labels)[dataset.labeled_mask])
        return {k: float(v.mean()) for k, v in rows.items()}
    probs = estimator.predict_proba(dataset.graph)
    mask = dataset.test_mask if dataset.test_mask is not None else dataset.labeled_mask
    return classification_metrics(
        probs[mask], np.asarray(dataset.labels)[mask], dataset.n_classes)
