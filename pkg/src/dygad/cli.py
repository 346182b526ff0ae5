"""Command-line interface: inject, train, evaluate, export-embeddings, sweep.

Every run writes into one output directory: a config snapshot, then the
artifacts of the subcommand (labeled edge file, checkpoint + training log,
metrics record, embedding TSV). Exit codes: 0 success, 1 usage or config
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import ConfigError, ExperimentConfig, load_config
from .datasets import (
    DatasetError,
    load_edge_list,
    load_jodie_csv,
    load_labeled_tsv,
    save_labeled_tsv,
    write_node_map,
)
from .evaluation import evaluate, export_embeddings
from .inject import inject_anomalies, write_cluster_tsv
from .synthetic import two_community_store
from .tgraph import ANOMALY, EventStore, NORMAL
from .trainer import Model, SplitSpec, fit, split_chronological, time_scale_of, write_training_log


def load_raw_store(config: ExperimentConfig):
    """Load the configured dataset. Returns (store, node_map or None)."""
    fmt = config.dataset_format
    if fmt == "edge-list":
        return load_edge_list(config.dataset_path)
    if fmt == "jodie":
        return load_jodie_csv(config.dataset_path)
    if fmt == "labeled-tsv":
        return load_labeled_tsv(config.dataset_path), None
    if fmt == "synthetic":
        store = two_community_store(
            n_nodes=config.synthetic_nodes, n_events=config.synthetic_events,
            widths=config.synthetic_widths, seed=config.synthetic_seed)
        return store, None
    raise ConfigError(f"unknown dataset_format {fmt!r}")


def prepare_store(config: ExperimentConfig):
    """Load and, when configured, inject anomalies. Returns
    (store, node_map, clusters)."""
    store, node_map = load_raw_store(config)
    clusters = None
    if config.inject_enabled:
        store, clusters = inject_anomalies(store, config.inject_rate,
                                           config.inject_k, config.inject_seed)
    elif not np.any(store.labels == ANOMALY):
        raise ConfigError(
            "dataset has no anomaly labels and injection is disabled; "
            "set inject_enabled=true or provide a labeled dataset")
    else:
        labels = np.where(store.labels == ANOMALY, ANOMALY, NORMAL)
        store = store.with_labels(labels)
    return store, node_map, clusters


def _run_dir(config: ExperimentConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(config.to_text())
    return out


def _splits(store: EventStore, config: ExperimentConfig):
    return split_chronological(
        store, SplitSpec(config.train_frac, config.val_frac, config.test_frac))


def _load_model(store, config, checkpoint) -> Model:
    splits = _splits(store, config)
    scale = time_scale_of(store, splits.train_idx)
    model = Model(config, store.feat_dim, time_scale=scale)
    model.load_state(T.load_params(checkpoint))
    return model, splits


def cmd_inject(config: ExperimentConfig) -> int:
    out = _run_dir(config)
    store, node_map = load_raw_store(config)
    store, clusters = inject_anomalies(store, config.inject_rate,
                                       config.inject_k, config.inject_seed)
    save_labeled_tsv(store, out / "injected.tsv")
    write_cluster_tsv(out / "clusters.tsv", clusters)
    if node_map:
        write_node_map(out / "node_map.tsv", node_map)
    n_anom = int((store.labels == ANOMALY).sum())
    print(f"wrote {out / 'injected.tsv'} ({store.n_edges} edges, "
          f"{n_anom} anomalies)")
    return 0


def cmd_train(config: ExperimentConfig) -> int:
    out = _run_dir(config)
    store, node_map, _ = prepare_store(config)
    if node_map:
        write_node_map(out / "node_map.tsv", node_map)

    def progress(record):
        print(f"epoch {record.epoch:3d}  train_loss {record.train_loss:.6f}  "
              f"val_auc {record.val_auc:.4f}  {record.seconds:.1f}s", flush=True)

    result = fit(store, config, progress=progress)
    T.save_params(out / "checkpoint.npz", result.model.parameters())
    write_training_log(result.log, out / "train_log.jsonl")
    print(f"best epoch {result.best_epoch} (val_auc {result.best_val_auc:.4f}); "
          f"checkpoint at {out / 'checkpoint.npz'}")
    return 0


def cmd_evaluate(config: ExperimentConfig, checkpoint: str, split: str) -> int:
    out = _run_dir(config)
    store, _, _ = prepare_store(config)
    model, splits = _load_model(store, config, checkpoint)
    positions = getattr(splits, f"{split}_idx")
    record = evaluate(
        model, store, positions, eval_seed=config.eval_seed,
        dataset=config.dataset_name or config.dataset_format, split=split,
        n_labeled_anomalies=config.n_labeled_anomalies,
        ablations=config.ablations(), seeds=config.seeds())
    path = out / f"metrics_{split}.json"
    path.write_text(record.to_json() + "\n")
    print(f"{split} auc {record.auc:.4f} -> {path}")
    return 0


def cmd_export(config: ExperimentConfig, checkpoint: str, split: str) -> int:
    out = _run_dir(config)
    store, _, _ = prepare_store(config)
    model, splits = _load_model(store, config, checkpoint)
    positions = getattr(splits, f"{split}_idx")
    path = out / f"embeddings_{split}.tsv"
    export_embeddings(model, store, positions, path, config.eval_seed)
    print(f"wrote {path} ({len(positions)} rows)")
    return 0


SWEEP_PARAMS = ("lambda", "neighbors")


def cmd_sweep(config: ExperimentConfig, param: str, values: list[str]) -> int:
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep param must be one of {SWEEP_PARAMS}")
    base_out = Path(config.out_dir)
    for raw in values:
        if param == "lambda":
            point = replace(config, contrastive_weight=float(raw))
        else:
            fanouts = (int(raw),) + tuple(config.fanouts[1:])
            point = replace(config, fanouts=fanouts)
        point = replace(point, out_dir=str(base_out / f"{param}_{raw}"))
        out = _run_dir(point)
        store, _, _ = prepare_store(point)
        result = fit(store, point)
        T.save_params(out / "checkpoint.npz", result.model.parameters())
        write_training_log(result.log, out / "train_log.jsonl")
        record = evaluate(
            result.model, store, result.splits.test_idx,
            eval_seed=point.eval_seed,
            dataset=point.dataset_name or point.dataset_format, split="test",
            n_labeled_anomalies=point.n_labeled_anomalies,
            ablations=point.ablations(), seeds=point.seeds())
        (out / "metrics_test.json").write_text(record.to_json() + "\n")
        print(f"{param}={raw}: test auc {record.auc:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dygad",
        description="semi-supervised anomaly detection on continuous-time "
                    "dynamic graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (repeatable)")
        p.add_argument("--out", help="output directory (overrides out_dir)")

    p = sub.add_parser("inject", help="inject synthetic anomalies, write a "
                                      "labeled edge file")
    common(p)
    p = sub.add_parser("train", help="train and write checkpoint + log")
    common(p)
    p.add_argument("--labels", type=int, help="number of labeled anomalies")
    p.add_argument("--seed", type=int, help="training seed")
    p = sub.add_parser("evaluate", help="score a split and write metrics")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p = sub.add_parser("export-embeddings", help="write per-edge embeddings")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p = sub.add_parser("sweep", help="grid over lambda or first-hop neighbors")
    common(p)
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True,
                   help="comma-separated grid points")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value
    if args.out:
        overrides["out_dir"] = args.out
    if getattr(args, "labels", None) is not None:
        overrides["n_labeled_anomalies"] = str(args.labels)
    if getattr(args, "seed", None) is not None:
        overrides["train_seed"] = str(args.seed)
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
        if args.command == "inject":
            return cmd_inject(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "evaluate":
            return cmd_evaluate(config, args.checkpoint, args.split)
        if args.command == "export-embeddings":
            return cmd_export(config, args.checkpoint, args.split)
        if args.command == "sweep":
            return cmd_sweep(config, args.param, args.values.split(","))
        parser.error(f"unknown command {args.command}")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
