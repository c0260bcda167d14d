"""Command-line entry point.

Subcommands mirror the pipeline stages: ``ingest`` (CSV -> dataset dump),
``synth`` (blob dataset dump), ``split`` (dataset -> scenario directory),
``train`` (one model, dumped with its metrics), ``eval`` (full task
suite), ``al`` (active-learning task), ``report`` (pretty-print a result
tree).  Every subcommand reads ``--config`` first and lets explicit flags
override file keys.

Exit codes: 0 success, 2 configuration error, 3 capability error,
4 data error, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

from ._version import __version__
from .data import (
    bundle_to_dir,
    load_dataset,
    load_flow_csv,
    partition_scenario,
    save_dataset,
)
from .exceptions import CapabilityError, ConfigError, DataError
from .experiment import NAMED_SCENARIOS, ExperimentConfig, run_experiment

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_CAPABILITY = 3
EXIT_DATA = 4


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="master experiment seed")
    parser.add_argument(
        "--model",
        choices=("nn", "energy", "ddu", "bnn", "rf"),
        help="model kind to train/evaluate",
    )
    parser.add_argument(
        "--scenario",
        choices=("custom", *sorted(NAMED_SCENARIOS)),
        help="which classes to withhold as unknown",
    )
    parser.add_argument(
        "--task",
        help="comma list from closed,calibration,rejection,ood,al",
    )
    parser.add_argument("--out", help="output directory root")
    parser.add_argument("--reps", type=int, help="number of repetitions")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowuq",
        description="Uncertainty-aware flow classification toolkit",
    )
    parser.add_argument("--version", action="version", version=f"flowuq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a flow CSV into a dataset dump")
    p.add_argument("--csv", required=True, help="input CSV file")
    p.add_argument("--label-column", default=None)
    p.add_argument("--drop-columns", default=None, help="comma list of columns")
    _common_flags(p)

    p = sub.add_parser("synth", help="generate a synthetic blob dataset dump")
    _common_flags(p)

    p = sub.add_parser("split", help="partition a dataset dump into a scenario")
    p.add_argument("--data", required=True, help="dataset dump (.npz)")
    p.add_argument("--unknown-classes", default=None, help="comma list of classes")
    _common_flags(p)

    p = sub.add_parser("train", help="train one model and dump it")
    _common_flags(p)

    p = sub.add_parser("eval", help="run the configured evaluation tasks")
    _common_flags(p)

    p = sub.add_parser("al", help="run the active-learning task")
    _common_flags(p)

    p = sub.add_parser("report", help="pretty-print a result tree")
    p.add_argument("path", help="report.json or an output directory")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    mapping = {
        "seed": "seed",
        "model": "model",
        "scenario": "scenario",
        "task": "task",
        "out": "out",
        "reps": "reps",
    }
    return {
        key: getattr(args, attr)
        for attr, key in mapping.items()
        if getattr(args, attr, None) is not None
    }


def _cmd_ingest(args) -> int:
    overrides = _overrides(args)
    if args.label_column is not None:
        overrides["label_column"] = args.label_column
    if args.drop_columns is not None:
        overrides["drop_columns"] = args.drop_columns
    overrides["data"] = args.csv
    config = ExperimentConfig.load(args.config, overrides)
    dataset, rejected = load_flow_csv(
        config["data"],
        label_column=config["label_column"],
        drop_columns=config.drop_columns(),
    )
    out = pathlib.Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.npz"
    save_dataset(dataset, path)
    print(
        f"ingested {dataset.n_samples} rows ({rejected} rejected), "
        f"{dataset.n_features} features, {dataset.n_classes} classes -> {path}"
    )
    return EXIT_OK


def _cmd_synth(args) -> int:
    from .experiment import _resolve_dataset

    config = ExperimentConfig.load(args.config, {**_overrides(args), "data": "synth"})
    dataset, _, unknowns = _resolve_dataset(config)
    out = pathlib.Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.npz"
    save_dataset(dataset, path)
    print(
        f"generated {dataset.n_samples} samples over {dataset.n_classes} classes "
        f"(unknowns: {', '.join(unknowns)}) -> {path}"
    )
    return EXIT_OK


def _cmd_split(args) -> int:
    from .experiment import _resolve_unknowns

    overrides = _overrides(args)
    if args.unknown_classes is not None:
        overrides["unknown_classes"] = args.unknown_classes
    config = ExperimentConfig.load(args.config, overrides)
    dataset = load_dataset(args.data)
    unknowns = _resolve_unknowns(config, dataset, None)
    bundle = partition_scenario(dataset, unknowns, seed=config["seed"])
    out = pathlib.Path(config["out"]) / "scenario"
    bundle_to_dir(bundle, out)
    sizes = ", ".join(
        f"{s}={getattr(bundle, s).n_samples}" for s in ("train", "val", "test", "ood")
    )
    print(f"scenario written to {out} ({sizes})")
    return EXIT_OK


def _cmd_run(args, force_task: str | None = None, force_reps: int | None = None) -> int:
    overrides = _overrides(args)
    if force_task is not None:
        overrides["task"] = force_task
    if force_reps is not None and "reps" not in overrides:
        overrides["reps"] = force_reps
    config = ExperimentConfig.load(args.config, overrides)
    report = run_experiment(config)
    out = pathlib.Path(config["out"]) / config.config_hash()
    print(f"report written to {out / 'report.json'}")
    for task, block in report["tasks"].items():
        line = ", ".join(
            f"{metric}={agg['mean']:.4f}±{agg['stderr']:.4f}"
            for metric, agg in block["aggregate"].items()
        )
        print(f"  {task}: {line}")
    return EXIT_OK


def _cmd_report(args) -> int:
    path = pathlib.Path(args.path)
    if path.is_dir():
        candidates = sorted(path.glob("**/report.json"))
        if not candidates:
            raise DataError(f"no report.json under {path}")
        path = candidates[-1]
    report = json.loads(path.read_text())
    print(f"flowuq report {report['config_hash']} (version {report['version']})")
    cfg = report["config"]
    print(
        f"  model={cfg['model']} scenario={cfg['scenario']} "
        f"task={cfg['task']} reps={cfg['reps']} seed={cfg['seed']}"
    )
    for task, block in report["tasks"].items():
        print(f"  {task}:")
        for metric, agg in block["aggregate"].items():
            print(f"    {metric}: {agg['mean']:.4f} ± {agg['stderr']:.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "ingest": _cmd_ingest,
        "synth": _cmd_synth,
        "split": _cmd_split,
        "train": lambda a: _cmd_run(a, force_task="closed", force_reps=1),
        "eval": _cmd_run,
        "al": lambda a: _cmd_run(a, force_task="al"),
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except CapabilityError as err:
        print(f"capability error: {err}", file=sys.stderr)
        return EXIT_CAPABILITY
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except Exception as err:  # pragma: no cover - safety net
        print(f"unexpected error: {err}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
