"""Command line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 some runs failed,
3 every run failed.
"""
import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import Optional, Sequence

from .core import RandomSource
from .data import Splits
from .exceptions import (
    AnalysisError,
    CheckpointError,
    ConfigError,
    DatasetError,
    InvalidInput,
    ParameterCapExceeded,
    PyMixLossException,
    TrainingFailed,
)
from .experiment.config import (
    DEFAULT_METHODS,
    EXTRA_METHODS,
    DatasetSpec,
    EscapeConfig,
    ExperimentConfig,
    MethodSpec,
    default_experiment_dict,
    write_blob_suite,
)
from .experiment.escape_run import escape_experiment
from .experiment.grid import grid_cells, run_grid
from .experiment.report import build_report, load_table
from .model import Architecture, init_model
from .results.rows import EpochRow
from .results.store import epoch_rows, run_file_name
from .trainer import DEFAULT_LRS, INIT_STREAM, TrainConfig, lr_sweep, train

LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2
EXIT_FAILED = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

METHODS = {**DEFAULT_METHODS, **EXTRA_METHODS}


class UsageError(PyMixLossException):
    """Invalid command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument(
        "-v", "--verbose", action="store_true", help="log debug messages"
    )
    group.add_argument(
        "-q", "--quiet", action="store_true", help="log warnings only"
    )


def _add_dataset(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("data", help="CSV file, one sample per row")
    parser.add_argument("--label-column", type=int, default=-1)
    parser.add_argument("--delimiter", default=",")
    parser.add_argument("--header", action="store_true")
    parser.add_argument(
        "--no-normalize",
        dest="normalize",
        action="store_false",
        help="skip z-score normalization",
    )
    parser.add_argument(
        "--architecture",
        choices=[a.value for a in Architecture],
        default=Architecture.LINEAR.value,
    )
    parser.add_argument(
        "--method", choices=sorted(METHODS), default="F=0-0.5"
    )
    parser.add_argument(
        "--config", help="JSON file with trainer settings to start from"
    )
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--output", default="run", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser of the ``pymixloss`` command."""
    parser = _Parser(
        prog="pymixloss",
        description="Train classifiers with scheduled CE/EL mixtures.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train_cmd = commands.add_parser("train", help="train one model")
    _add_dataset(train_cmd)
    train_cmd.add_argument("--lr", type=float, default=DEFAULT_LRS[0])
    _add_common(train_cmd)

    sweep = commands.add_parser("sweep", help="sweep learning rates")
    _add_dataset(sweep)
    sweep.add_argument(
        "--lrs", type=float, nargs="+", default=list(DEFAULT_LRS)
    )
    _add_common(sweep)

    grid = commands.add_parser("grid", help="run a method comparison grid")
    grid.add_argument("--config", help="JSON experiment config")
    grid.add_argument("--output", help="override the output directory")
    grid.add_argument("--seed", type=int, help="run this seed only")
    grid.add_argument("--workers", type=int)
    grid.add_argument(
        "--no-resume",
        dest="resume",
        action="store_false",
        help="retrain cells that are already complete",
    )
    grid.add_argument(
        "--dry-run", action="store_true", help="list the cells and exit"
    )
    grid.add_argument(
        "--show-defaults",
        action="store_true",
        help="print the fully defaulted config and exit",
    )
    _add_common(grid)

    report = commands.add_parser("report", help="summarize a grid")
    report.add_argument("results", help="grid output directory")
    report.add_argument("--baseline", default="CE")
    report.add_argument("--methods", nargs="+")
    report.add_argument(
        "--output", help="report directory (default: <results>/report)"
    )
    _add_common(report)

    escape = commands.add_parser(
        "escape", help="compare escaping efficiencies"
    )
    escape.add_argument("--config", help="JSON escape config")
    escape.add_argument("--output", help="override the output directory")
    escape.add_argument("--seed", type=int)
    escape.add_argument("--dry-run", action="store_true")
    escape.add_argument("--show-defaults", action="store_true")
    _add_common(escape)

    gen = commands.add_parser(
        "gen-data", help="write synthetic datasets and a grid config"
    )
    gen.add_argument("output", help="directory for the datasets")
    gen.add_argument("--count", type=int, default=10)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--per-class", type=int, default=30)
    _add_common(gen)
    return parser


def _setup_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT)


def _print_json(data) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def _single_run_setup(args):
    spec = DatasetSpec(
        name=os.path.splitext(os.path.basename(args.data))[0],
        path=os.path.abspath(args.data),
        label_column=args.label_column,
        delimiter=args.delimiter,
        header=args.header,
        normalize=args.normalize,
    )
    splits: Splits = spec.load()
    method = MethodSpec.from_dict(args.method, METHODS[args.method])
    cfg = TrainConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as stream:
            cfg = TrainConfig.from_dict(json.load(stream))
    changes = {"loss": method.loss, "seed": args.seed}
    if args.epochs is not None:
        changes["epochs"] = args.epochs
    if args.batch_size is not None:
        changes["batch_size"] = args.batch_size
    cfg = cfg.replace(**changes)
    architecture = Architecture(args.architecture)

    def model_factory():
        return init_model(
            architecture,
            splits.train.input_dim,
            splits.train.classes,
            RandomSource(args.seed, (INIT_STREAM,)),
        )

    return spec, splits, method, cfg, model_factory


def _write_run(args, spec, method, report) -> str:
    os.makedirs(args.output, exist_ok=True)
    name = run_file_name(
        spec.name,
        args.architecture,
        method.name,
        method.loss.label,
        report.config.lr,
        args.seed,
    )
    EpochRow.write_csv(
        os.path.join(args.output, f"{name}.csv"), epoch_rows(report)
    )
    return name


def _summary(report) -> dict:
    return {
        "lr": report.config.lr,
        "best_val_epoch": report.best_val_epoch,
        "best_val_acc": report.best_val_accuracy,
        "test_acc": report.test_accuracy_at_best,
        "failed": report.failed,
        "diagnostic": report.diagnostic,
        "checkpoint": report.checkpoint,
    }


def cmd_train(args) -> int:
    """Train one model and write its epoch CSV and checkpoint."""
    spec, splits, method, cfg, model_factory = _single_run_setup(args)
    cfg = cfg.replace(lr=args.lr * method.lr_scale)
    os.makedirs(args.output, exist_ok=True)
    checkpoint = os.path.join(args.output, "best.txt")
    report = train(model_factory(), splits, cfg, checkpoint)
    _write_run(args, spec, method, report)
    _print_json(_summary(report))
    return EXIT_FAILED if report.failed else EXIT_OK


def cmd_sweep(args) -> int:
    """Sweep learning rates and keep the best validation run."""
    spec, splits, method, cfg, model_factory = _single_run_setup(args)
    lrs = [lr * method.lr_scale for lr in args.lrs]
    best, reports = lr_sweep(model_factory, splits, cfg, lrs)
    for report in reports:
        _write_run(args, spec, method, report)
    _print_json(
        {"best": _summary(best), "runs": [_summary(r) for r in reports]}
    )
    return EXIT_PARTIAL if any(r.failed for r in reports) else EXIT_OK


def _grid_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = ExperimentConfig.from_dict(default_experiment_dict())
    changes = {}
    if args.output:
        changes["output_dir"] = os.path.abspath(args.output)
    if args.seed is not None:
        changes["seeds"] = (args.seed,)
    if args.workers is not None:
        changes["workers"] = args.workers
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cmd_grid(args) -> int:
    """Run, or list, the cells of a grid."""
    cfg = _grid_config(args)
    if args.show_defaults:
        _print_json(cfg.to_dict())
        return EXIT_OK
    if args.dry_run:
        for cell in grid_cells(cfg):
            print(
                cell.run_id[:12],
                cell.experiment,
                cell.method.name,
                f"seed={cell.seed}",
            )
        return EXIT_OK
    result = run_grid(cfg, resume=args.resume)
    try:
        print(build_report(result.table, cfg.baseline).text(), end="")
    except AnalysisError as exc:
        LOG.warning("No report for this grid: %s", exc)
    failed = [row for row in result.rows if row.failed]
    if failed and len(failed) == len(result.rows):
        return EXIT_FAILED
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_report(args) -> int:
    """Write the comparison report of a grid output directory."""
    table = load_table(args.results, args.methods)
    report = build_report(table, args.baseline)
    report.write(args.output or os.path.join(args.results, "report"))
    print(report.text(), end="")
    return EXIT_OK


def cmd_escape(args) -> int:
    """Run the escaping-efficiency comparison."""
    cfg = EscapeConfig.load(args.config) if args.config else EscapeConfig()
    changes = {}
    if args.output:
        changes["output_dir"] = args.output
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    if args.show_defaults or args.dry_run:
        _print_json(cfg.to_dict())
        return EXIT_OK
    result = escape_experiment(cfg)
    for row in result.escape:
        print(
            f"{row.method}: estimate {row.ee_estimate:.6g}, "
            f"simulated {row.ee_simulated:.6g} +- {row.stderr:.2g}"
        )
    return EXIT_OK


def cmd_gen_data(args) -> int:
    """Write a suite of synthetic datasets and its grid config."""
    path = write_blob_suite(
        args.output, args.count, args.seed, args.per_class
    )
    print(path)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "sweep": cmd_sweep,
    "grid": cmd_grid,
    "report": cmd_report,
    "escape": cmd_escape,
    "gen-data": cmd_gen_data,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the ``pymixloss`` command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pymixloss: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _setup_logging(args)
    try:
        return COMMANDS[args.command](args)
    except TrainingFailed as exc:
        LOG.error("%s", exc)
        return EXIT_FAILED
    except (
        ConfigError,
        DatasetError,
        InvalidInput,
        AnalysisError,
        CheckpointError,
        ParameterCapExceeded,
        OSError,
        json.JSONDecodeError,
    ) as exc:
        LOG.error("%s", exc)
        return EXIT_USAGE
