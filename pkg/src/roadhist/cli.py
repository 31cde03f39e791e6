"""Command-line harness.

Subcommands: gen-data, partition, train, evaluate, embed, report.
Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 training failure.

The ``train`` subcommand also reads a plain-text config file
(``--config``) of ``key = value`` lines ('#' starts a comment). Keys
mirror the long option names with hyphens or underscores (model,
clusters, batches, epochs, seed, parallel, reps, imbalance);
command-line flags win over file values.
"""

from __future__ import annotations

import argparse
import json
import sys

from .adversarial_gcn import load_model
from .datasets import (
    CATEGORICAL_FEATURES,
    SynthConfig,
    generate_synthetic,
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
    ALL_MODELS,
    ExperimentConfig,
    evaluate_model,
    run_experiment,
    write_report,
)
from .graphs import build_line_graph, read_segments_csv
from .metrics import aggregate, write_report_csv
from .node2vec import Node2VecEmbedding, write_embeddings_csv
from .partitioning import edge_cut, partition_graph, write_assignment_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; remap to 1 so the
    data-error code stays unambiguous."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def parse_config_file(path) -> dict:
    """Parse ``key = value`` lines; values are coerced to int, float or
    bool when they look like one."""
    out = {}
    try:
        f = open(path)
    except OSError as e:
        raise DataLoadError(f"cannot open config file: {e}") from e
    with f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = _coerce(value)
    return out


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for kind in (int, float):
        try:
            return kind(value)
        except ValueError:
            pass
    return value


def _load_graph(data_dir):
    network = read_segments_csv(f"{data_dir}/segments.csv",
                                categorical_columns=CATEGORICAL_FEATURES)
    return build_line_graph(network, categorical_features=CATEGORICAL_FEATURES)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_data(args):
    try:
        rows, cols = (int(p) for p in args.grid.lower().split("x"))
    except ValueError:
        raise ConfigurationError(f"--grid expects RxC, got {args.grid!r}")
    cfg = SynthConfig(grid_rows=rows, grid_cols=cols,
                      labeled_fraction=args.labeled_fraction)
    dataset, network, observations = generate_synthetic(cfg, seed=args.seed)
    write_dataset_dir(args.out, network, observations, dataset)
    print(f"wrote {dataset.n_nodes} segments "
          f"({int(dataset.labeled_mask.sum())} labeled) to {args.out}")
    return EXIT_OK


def cmd_partition(args):
    graph = _load_graph(args.data)
    partition = partition_graph(graph, args.clusters, args.imbalance, args.seed)
    out = args.out or f"{args.data}/assignment.csv"
    write_assignment_csv(graph.node_ids, partition, out)
    sizes = partition.cluster_sizes()
    print(f"{args.clusters} clusters, sizes {int(sizes.min())}..{int(sizes.max())}, "
          f"edge cut {edge_cut(graph, partition)}; wrote {out}")
    return EXIT_OK


def cmd_train(args):
    file_cfg = parse_config_file(args.config) if args.config else {}

    def opt(name, default):
        flag = getattr(args, name)
        if flag is not None:
            return flag
        return file_cfg.get(name, default)

    config = ExperimentConfig(
        model=opt("model", "full-gcn"),
        n_clusters=int(opt("clusters", 100)),
        n_batches=int(opt("batches", 10)),
        repetitions=int(opt("reps", 1)),
        epochs=None if opt("epochs", None) is None else int(opt("epochs", None)),
        master_seed=int(opt("seed", 0)),
        parallel=int(opt("parallel", 1)),
        imbalance=float(opt("imbalance", 1.03)),
    )
    dataset = read_dataset_dir(args.data)
    checkpoint_dir = (f"{args.out}/checkpoints"
                      if config.model in ("full-gcn", "gcn-no-adv") else None)
    report = run_experiment(dataset, config, checkpoint_dir=checkpoint_dir)
    write_report(report, args.out)
    for name, entry in report.metrics.items():
        print(f"{name}: mean {entry['mean']:.4f} +- {entry['sem']:.4f} "
              f"(median {entry['median']:.4f})")
    print(f"report written to {args.out}/report.json")
    return EXIT_OK


def cmd_evaluate(args):
    est = load_model(args.checkpoint)
    dataset = read_dataset_dir(args.data)
    record = evaluate_model(est, dataset)
    if args.out:
        with open(args.out, "w") as f:
            json.dump(record, f, indent=2, sort_keys=True)
            f.write("\n")
    for name, value in record.items():
        print(f"{name}: {value:.4f}")
    return EXIT_OK


def cmd_embed(args):
    graph = _load_graph(args.data)
    model = Node2VecEmbedding(
        dimensions=args.dims,
        feature_dimensions=args.feature_dims,
        walk_length=args.walk_length,
        walks_per_node=args.walks_per_node,
        include_features=args.mode,
        random_state=args.seed,
    )
    emb = model.fit(graph).embedding_
    out = args.out or f"{args.data}/embeddings.csv"
    write_embeddings_csv(graph.node_ids, emb, out)
    print(f"wrote {emb.shape[0]}x{emb.shape[1]} embeddings to {out}")
    return EXIT_OK


def cmd_report(args):
    records = []
    for path in args.inputs:
        try:
            with open(path) as f:
                data = json.load(f)
        except OSError as e:
            raise DataLoadError(f"cannot open report {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise DataLoadError(f"{path} is not a report JSON: {e}") from e
        if "per_rep_means" not in data:
            raise DataLoadError(f"{path} is not an experiment report")
        records.extend(data["per_rep_means"])
    combined = aggregate(records)
    write_report_csv(combined, args.out)
    print(f"aggregated {len(records)} repetitions from {len(args.inputs)} "
          f"report(s) into {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="roadhist",
                     description="Travel-speed histogram prediction on road networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--grid", default="23x23", help="intersection grid, RxC")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labeled-fraction", type=float, default=0.6)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("partition", help="partition a dataset's line graph")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--imbalance", type=float, default=1.03)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="assignment CSV path (default: DATA/assignment.csv)")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train", help="train a model and write a report")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for the report")
    p.add_argument("--model", choices=sorted(ALL_MODELS))
    p.add_argument("--clusters", type=int)
    p.add_argument("--batches", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--parallel", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--imbalance", type=float)
    p.add_argument("--config", help="key = value config file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the metric record as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("embed", help="write walk-based node embeddings")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["none", "sequence", "feature_graph"],
                   default="none")
    p.add_argument("--dims", type=int, default=128)
    p.add_argument("--feature-dims", type=int, default=32)
    p.add_argument("--walk-length", type=int, default=80)
    p.add_argument("--walks-per-node", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("report", help="aggregate repetition records from reports")
    p.add_argument("--inputs", nargs="+", required=True, help="report.json files")
    p.add_argument("--out", required=True, help="aggregated CSV path")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (DataLoadError, GraphStructureError, InsufficientDataError,
            FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as e:
        print(f"training failed: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except (ConfigurationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
