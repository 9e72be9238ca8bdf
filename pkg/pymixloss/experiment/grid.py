"""Run a grid of datasets x architectures x methods x seeds.

Every cell sweeps the configured learning rates and keeps the run with the
best validation accuracy. Cells run in worker processes; only the parent
process writes to the output directory, through a single
:class:`~pymixloss.results.store.RunStore`.
"""
import functools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..analysis import AccuracyTable
from ..core import PRNG_ALGORITHM, RandomSource
from ..data import Splits
from ..exceptions import AnalysisError, TrainingFailed
from ..model import Architecture, ClassifierModel, init_model, save_checkpoint
from ..results.rows import RunSummaryRow
from ..results.store import CHECKPOINTS_DIR, RunStore, run_file_name
from ..results.store import run_store
from ..trainer import INIT_STREAM, RunReport, TrainConfig, lr_sweep
from ..util import code_version, utc_timestamp
from .config import DatasetSpec, ExperimentConfig, MethodSpec

LOG = logging.getLogger(__name__)

ACCURACY_FILE = "accuracy.csv"
PROVENANCE_FILE = "provenance.json"


@dataclass(frozen=True)
class GridCell:
    """One (dataset, architecture, method, seed) combination."""

    dataset: DatasetSpec
    architecture: Architecture
    method: MethodSpec
    seed: int
    run_id: str

    @property
    def experiment(self) -> str:
        """Column name of the cell in the accuracy table."""
        return experiment_name(self.dataset.name, self.architecture.value)


@dataclass
class CellOutcome:
    """Best run of a cell, or the reason every run failed."""

    cell: GridCell
    report: Optional[RunReport]
    diagnostic: str = ""


@dataclass
class GridResult:
    """Accuracy table, per-run rows and provenance of a grid."""

    table: AccuracyTable
    rows: List[RunSummaryRow]
    provenance: Dict


def experiment_name(dataset: str, architecture: str) -> str:
    """Return the accuracy-table column of a dataset and architecture."""
    return f"{dataset}/{architecture}"


def grid_cells(cfg: ExperimentConfig) -> Iterator[GridCell]:
    """Yield every cell of the grid in a fixed order."""
    for dataset in cfg.datasets:
        for architecture in cfg.architectures:
            for method in cfg.methods:
                for seed in cfg.seeds:
                    yield GridCell(
                        dataset,
                        architecture,
                        method,
                        seed,
                        cfg.run_id(dataset, architecture, method, seed),
                    )


@functools.lru_cache(maxsize=8)
def _load_splits(dataset: DatasetSpec, base_dir: str) -> Splits:
    return dataset.load(base_dir)


def run_cell(
    cell: GridCell,
    template: TrainConfig,
    lrs: Sequence[float],
    base_dir: str = ".",
) -> CellOutcome:
    """Sweep the learning rates of one cell.

    The initial weights depend only on the seed, so every learning rate
    and every method starts from the same model.
    """
    splits = _load_splits(cell.dataset, base_dir)
    cfg = template.replace(loss=cell.method.loss, seed=cell.seed)

    def model_factory() -> ClassifierModel:
        return init_model(
            cell.architecture,
            splits.train.input_dim,
            splits.train.classes,
            RandomSource(cell.seed, (INIT_STREAM,)),
        )

    scale = cell.method.lr_scale
    try:
        best, _ = lr_sweep(
            model_factory, splits, cfg, [lr * scale for lr in lrs]
        )
    except TrainingFailed as exc:
        return CellOutcome(cell, None, str(exc))
    return CellOutcome(cell, best)


def _run_name(cell: GridCell, lr: float) -> str:
    return run_file_name(
        cell.dataset.name,
        cell.architecture.value,
        cell.method.name,
        cell.method.loss.label,
        lr,
        cell.seed,
    )


def record_outcome(store: RunStore, outcome: CellOutcome) -> RunSummaryRow:
    """Write the files of one finished cell and add its summary row."""
    cell = outcome.cell
    row = RunSummaryRow(
        run_id=cell.run_id,
        dataset=cell.dataset.name,
        architecture=cell.architecture.value,
        method=cell.method.name,
        seed=cell.seed,
    )
    report = outcome.report
    if report is None:
        LOG.error("Cell %s failed: %s", cell.run_id[:12], outcome.diagnostic)
        row.lr = float("nan")
        row.best_val_epoch = -1
        row.best_val_acc = 0.0
        row.test_acc = 0.0
        row.failed = True
        row.diagnostic = outcome.diagnostic
        return store.add(row)

    name = _run_name(cell, report.config.lr)
    row.lr = report.config.lr
    row.best_val_epoch = report.best_val_epoch
    row.best_val_acc = report.best_val_accuracy
    row.test_acc = report.test_accuracy_at_best
    row.failed = False
    row.epochs_file = store.write_epochs(name, report)
    if report.best_model is not None:
        os.makedirs(store.path(CHECKPOINTS_DIR), exist_ok=True)
        save_checkpoint(report.best_model, store.checkpoint_path(name))
        row.checkpoint = os.path.join(CHECKPOINTS_DIR, f"{name}.txt")
    return store.add(row)


def accuracy_table(
    rows: Sequence[RunSummaryRow],
    methods: Optional[Sequence[str]] = None,
    experiments: Optional[Sequence[str]] = None,
) -> AccuracyTable:
    """Aggregate per-seed summary rows into an accuracy table.

    A cell holds the mean test accuracy over its seeds, a failed seed
    counting as 0. The failure flag of a cell is set when every seed failed.

    Raises:
        AnalysisError when there are no rows or a cell has no rows.
    """
    if not rows:
        raise AnalysisError("no completed runs to tabulate")
    if methods is None:
        methods = list(dict.fromkeys(row.method for row in rows))
    if experiments is None:
        experiments = list(
            dict.fromkeys(
                experiment_name(row.dataset, row.architecture) for row in rows
            )
        )
    scores: Dict[Tuple[str, str], List[Tuple[float, bool]]] = {}
    for row in rows:
        key = (row.method, experiment_name(row.dataset, row.architecture))
        failed = bool(row.failed)
        scores.setdefault(key, []).append(
            (0.0 if failed else row.test_acc, failed)
        )

    values = np.zeros((len(methods), len(experiments)))
    failed = np.zeros(values.shape, dtype=bool)
    for m, method in enumerate(methods):
        for e, experiment in enumerate(experiments):
            cell = scores.get((method, experiment))
            if not cell:
                raise AnalysisError(
                    f"no runs for method {method!r} on {experiment!r}"
                )
            values[m, e] = np.mean([value for value, _ in cell])
            failed[m, e] = all(flag for _, flag in cell)
    return AccuracyTable(methods, experiments, values, failed)


def provenance(cfg: ExperimentConfig) -> Dict:
    """Return the provenance record of a grid run."""
    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "code_version": code_version(),
        "prng": PRNG_ALGORITHM,
        "timestamp": utc_timestamp(),
    }


def _execute(
    cfg: ExperimentConfig, pending: List[GridCell]
) -> Iterator[CellOutcome]:
    workers = cfg.workers or os.cpu_count() or 1
    workers = min(workers, len(pending))
    if workers <= 1:
        for cell in pending:
            yield run_cell(cell, cfg.trainer, cfg.lrs, cfg.base_dir)
        return
    LOG.info("Running %d cells on %d workers", len(pending), workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(run_cell, cell, cfg.trainer, cfg.lrs, cfg.base_dir)
            for cell in pending
        ]
        for future in as_completed(futures):
            yield future.result()


def run_grid(cfg: ExperimentConfig, resume: bool = True) -> GridResult:
    """Run every cell of ``cfg`` that is not already complete.

    Completed cells found in the output directory are skipped when
    ``resume`` is True. Summary rows are flushed after every cell so that
    an interrupted grid can be resumed.
    """
    cells = list(grid_cells(cfg))
    directory = cfg.output_path()
    with run_store(directory) as store:
        pending = [
            cell
            for cell in cells
            if not (resume and store.is_complete(cell.run_id))
        ]
        LOG.info(
            "Grid has %d cells, %d to run, output in %s",
            len(cells),
            len(pending),
            directory,
        )
        for done, outcome in enumerate(_execute(cfg, pending), start=1):
            record_outcome(store, outcome)
            store.update_if_modified()
            LOG.info(
                "Cell %d/%d done: %s %s %s seed %d",
                done,
                len(pending),
                outcome.cell.experiment,
                outcome.cell.method.name,
                "failed" if outcome.report is None else "ok",
                outcome.cell.seed,
            )
        rows = [store.get(cell.run_id) for cell in cells]

    table = accuracy_table(
        rows,
        methods=[m.name for m in cfg.methods],
        experiments=list(
            dict.fromkeys(cell.experiment for cell in cells)
        ),
    )
    table.to_csv(os.path.join(directory, ACCURACY_FILE))
    record = provenance(cfg)
    with open(
        os.path.join(directory, PROVENANCE_FILE), "w", encoding="utf-8"
    ) as stream:
        json.dump(record, stream, indent=2, sort_keys=True)
    return GridResult(table, rows, record)
