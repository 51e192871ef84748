"""Operator entry point.

Subcommands: gen-data, import-data, train, eval, analyze, sweep. Every run is
driven by a JSON config file with a flat key set; command-line flags override
config keys. Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import stability_report, write_report
from .dataset import import_receiver_text, load_dataset, save_dataset
from .errors import ConfigError, RefgameError
from .game import read_records, trace_to_record, write_records
from .synthetic import SyntheticSpec, generate_synthetic
from .training import (ModelConfig, TrainConfig, evaluate_split,
                       load_model_from_checkpoint, train)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _load_config(path: str | None, cls, overrides: dict):
    """Build a config dataclass from a JSON file plus non-None flag overrides."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed config {path}: {e}") from e
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown} (known: {sorted(known)})")
    return cls(**data)


def _write_run_metadata(out_dir: Path, resolved_config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(resolved_config, indent=1, sort_keys=True))
    (out_dir / "VERSION").write_text(__version__ + "\n")


def cmd_gen_data(args) -> int:
    spec = _load_config(args.spec, SyntheticSpec, {"seed": args.seed})
    ds = generate_synthetic(spec)
    save_dataset(ds, args.out)
    _write_run_metadata(Path(args.out), dataclasses.asdict(spec))
    print(f"wrote {len(ds.classes)} classes to {args.out}")
    for cid, name in ds.classes:
        print(f"  class {cid} {name}: {len(ds.sender_views[cid])} views, "
              f"difficulty {ds.difficulty[cid]:.4f}")
    return EXIT_OK


def cmd_import_data(args) -> int:
    ds = load_dataset(args.dataset)
    ds = import_receiver_text(ds, args.descriptions, args.embeddings,
                              pooled=not args.word_sets)
    save_dataset(ds, args.out)
    print(f"imported receiver views for {len(ds.classes)} classes into {args.out}")
    return EXIT_OK


# flat train-config keys accepted in JSON files / as flags
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}


def _split_train_config(path: str | None, overrides: dict) -> tuple[TrainConfig, ModelConfig]:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed config {path}: {e}") from e
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
    data.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(data) - _TRAIN_KEYS - _MODEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    train_kwargs = {k: v for k, v in data.items() if k in _TRAIN_KEYS}
    model_kwargs = {k: v for k, v in data.items() if k in _MODEL_KEYS}
    if "msg_dim" not in train_kwargs:
        raise ConfigError("config needs msg_dim")
    return TrainConfig(**train_kwargs), ModelConfig(**model_kwargs)


def cmd_train(args) -> int:
    cfg, model_cfg = _split_train_config(args.config, {
        "msg_dim": args.message_dim,
        "seed": args.seed,
        "ablation": args.ablation,
        "lr": args.lr,
        "max_epochs": args.max_epochs,
        "max_updates": args.max_updates,
    })
    dataset = load_dataset(args.dataset)
    out = Path(args.out)
    _write_run_metadata(out, {"train": dataclasses.asdict(cfg),
                              "model": dataclasses.asdict(model_cfg),
                              "dataset": str(args.dataset)})
    result = train(cfg, model_cfg, dataset, out_dir=out, threads=args.threads)
    print(f"best val acc@K {result.best_val_acc:.4f} (acc@1 {result.best_val_acc1:.4f}) "
          f"at epoch {result.best_epoch} after {result.updates} updates")
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = load_dataset(args.dataset)
    sender, receiver, baselines, cfg, model_cfg, metadata = \
        load_model_from_checkpoint(args.checkpoint, dataset)
    if args.k is not None:
        cfg.eval_k = args.k
    result = evaluate_split(sender, receiver, dataset, args.split, cfg,
                            keep_traces=True, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records((trace_to_record(t) for t in result.traces), out / "episodes.jsonl")
    metrics = {
        "split": args.split,
        "episodes": len(result.traces),
        "n_candidates": result.n_candidates,
        "k": result.k,
        "acc_at_k": result.acc_at_k,
        "acc_at_1": result.acc_at_1,
        "mean_length": result.mean_length,
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True))
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_analyze(args) -> int:
    records = []
    for path in args.episodes:
        records.extend(read_records(path))
    difficulty = class_names = None
    max_steps = None
    if args.dataset:
        ds = load_dataset(args.dataset)
        difficulty = ds.difficulty
        class_names = {cid: name for cid, name in ds.classes}
    if args.max_steps:
        max_steps = args.max_steps
    summary = write_report(records, args.out, difficulty=difficulty,
                           class_names=class_names, k=args.k, max_steps=max_steps)
    if args.stability:
        runs = [json.loads(Path(p).read_text()) for p in args.stability]
        metrics = [{k: v for k, v in run.items() if isinstance(v, (int, float))}
                   for run in runs]
        stats = stability_report(metrics)
        rows = ["metric,mean,variance"]
        for key, (mean, var) in sorted(stats.items()):
            rows.append(f"{key},{mean!r},{var!r}")
        (Path(args.out) / "stability.csv").write_text("\n".join(rows) + "\n")
    print(f"report written to {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    dims = args.dims
    if len(set(dims)) != len(dims):
        raise ConfigError(f"duplicate message dims in sweep: {dims}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(args.dataset)
    rows = ["dim,split,n_candidates,k,acc_at_k,acc_at_1,mean_length,status"]
    for dim in dims:
        try:
            cfg, model_cfg = _split_train_config(args.config, {
                "msg_dim": dim, "seed": args.seed})
            result = train(cfg, model_cfg, dataset, out_dir=out / f"d{dim}")
            splits = [s for s in ("test_in", "test_out") if s in dataset.splits]
            stores = {"sender": result.sender.params, "receiver": result.receiver.params}
            live = {n: s.snapshot() for n, s in stores.items()}
            for n, s in stores.items():
                s.restore(result.best_state[n])
            for split in splits:
                ev = evaluate_split(result.sender, result.receiver, dataset, split, cfg)
                rows.append(f"{dim},{split},{ev.n_candidates},{ev.k},"
                            f"{ev.acc_at_k!r},{ev.acc_at_1!r},{ev.mean_length!r},ok")
            for n, s in stores.items():
                s.restore(live[n])
        except RefgameError as e:
            rows.append(f"{dim},,,,,,,failed: {e}")
    (out / "sweep.csv").write_text("\n".join(rows) + "\n")
    print(f"sweep written to {out / 'sweep.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refgame", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON file of synthetic-spec keys")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("import-data", help="attach text-derived receiver views")
    p.add_argument("--dataset", required=True)
    p.add_argument("--descriptions", required=True,
                   help="one line per class: name<TAB>token token ...")
    p.add_argument("--embeddings", required=True, help="lines: token v1 v2 ...")
    p.add_argument("--word-sets", action="store_true",
                   help="store word-vector sets instead of mean vectors")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_import_data)

    p = sub.add_parser("train", help="train agents on a dataset")
    p.add_argument("--config", help="JSON config (TrainConfig + ModelConfig keys)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--message-dim", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--ablation", choices=["both-agents-update", "only-receiver-update"])
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--max-updates", type=int)
    p.add_argument("--threads", type=int, default=1,
                   help="evaluation parallelism; never changes results")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("analyze", help="reports from episode logs")
    p.add_argument("--episodes", nargs="+", required=True)
    p.add_argument("--dataset", help="source of difficulty scores and class names")
    p.add_argument("--k", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--stability", nargs="+",
                   help="metrics.json files from runs with different seeds")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("sweep", help="train one model per message dim")
    p.add_argument("--config", help="base train config")
    p.add_argument("--dataset", required=True)
    p.add_argument("--dims", nargs="+", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except RefgameError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
