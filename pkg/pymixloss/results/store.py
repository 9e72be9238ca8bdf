"""Resumable on-disk store of training runs.

Layout of an output directory::

    runs.csv            one RunSummaryRow per completed cell
    epochs/<name>.csv   one EpochRow per epoch of every trained run
    checkpoints/<name>.txt

A cell is complete, and skipped when a grid is resumed, once its summary
row is present and either its epoch file exists or every run failed.
"""
import contextlib
import logging
import os
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Union

from ..trainer import RunReport
from ..util import slugify
from .rows import EpochRow, RunSummaryRow

LOG = logging.getLogger(__name__)

SUMMARY_FILE = "runs.csv"
EPOCHS_DIR = "epochs"
CHECKPOINTS_DIR = "checkpoints"

PathLike = Union[str, os.PathLike]


def run_file_name(
    dataset: str,
    architecture: str,
    method: str,
    schedule: str,
    lr: float,
    seed: int,
) -> str:
    """Return the base file name of one run's outputs."""
    parts = [dataset, architecture, method, schedule, f"lr{lr:g}", f"s{seed}"]
    return "__".join(slugify(p) for p in parts)


def epoch_rows(report: RunReport) -> List[EpochRow]:
    """Return the per-epoch rows of ``report``."""
    return [
        EpochRow(
            epoch=record.epoch,
            alpha=record.alpha,
            beta=record.beta,
            F=record.focus,
            train_loss=record.train_loss,
            train_acc=record.train_acc,
            val_acc=record.val_acc,
            test_acc=record.test_acc,
        )
        for record in report.epochs
    ]


class RunStore:
    """Summary rows of every completed cell in an output directory."""

    def __init__(self, directory: PathLike, rows: Sequence[RunSummaryRow]):
        """Create a store over ``directory`` holding ``rows``."""
        self.directory = os.fspath(directory)
        self._rows: Dict[str, RunSummaryRow] = {row.key(): row for row in rows}
        self.modified = False

    def __repr__(self) -> str:
        """Return a string representation of the store."""
        return f"<RunStore {self.directory!r} runs={len(self._rows)}>"

    @property
    def rows(self) -> Mapping[str, RunSummaryRow]:
        """Summary rows by run id."""
        return self._rows

    def path(self, *parts: str) -> str:
        """Return a path inside the output directory."""
        return os.path.join(self.directory, *parts)

    def epochs_path(self, name: str) -> str:
        """Return the epoch CSV path for run file name ``name``."""
        return self.path(EPOCHS_DIR, f"{name}.csv")

    def checkpoint_path(self, name: str) -> str:
        """Return the checkpoint path for run file name ``name``."""
        return self.path(CHECKPOINTS_DIR, f"{name}.txt")

    def is_complete(self, run_id: str) -> bool:
        """Return True if ``run_id`` failed or has its epoch file."""
        row = self._rows.get(run_id)
        if row is None:
            return False
        if getattr(row, "failed", False):
            return True
        epochs_file = getattr(row, "epochs_file", "")
        return bool(epochs_file) and os.path.exists(self.path(epochs_file))

    def get(self, run_id: str) -> Optional[RunSummaryRow]:
        """Return the summary row of ``run_id``, if any."""
        return self._rows.get(run_id)

    def write_epochs(self, name: str, report: RunReport) -> str:
        """Write the epoch CSV of one run; return its relative path."""
        os.makedirs(self.path(EPOCHS_DIR), exist_ok=True)
        EpochRow.write_csv(self.epochs_path(name), epoch_rows(report))
        return os.path.join(EPOCHS_DIR, f"{name}.csv")

    def add(self, row: RunSummaryRow) -> RunSummaryRow:
        """Record a completed cell, replacing any earlier row."""
        self._rows[row.key()] = row
        self.modified = True
        return row

    def update_if_modified(self) -> bool:
        """Write runs.csv if any row was added or modified.

        Returns True if the file was written.
        """
        modified = self.modified or any(
            row.changed for row in self._rows.values()
        )
        if not modified:
            return False
        os.makedirs(self.directory, exist_ok=True)
        target = self.path(SUMMARY_FILE)
        partial = f"{target}.partial"
        RunSummaryRow.write_csv(partial, self._rows.values())
        os.replace(partial, target)
        for row in self._rows.values():
            row.saved()
        self.modified = False
        return True


def load_rows(directory: PathLike) -> List[RunSummaryRow]:
    """Read runs.csv of ``directory``; a missing file means no runs."""
    summary = os.path.join(os.fspath(directory), SUMMARY_FILE)
    if not os.path.exists(summary):
        return []
    return list(RunSummaryRow.read_csv(summary))


@contextlib.contextmanager
def run_store(directory: PathLike) -> Iterator[RunStore]:
    """Yield the RunStore of an output directory.

    Usage:
        with run_store(output_dir) as store:
            ...

    Rows added through the store are written back to runs.csv when the
    block exits, also when it exits with an exception, so that completed
    runs survive an interrupted grid.
    """
    store = RunStore(directory, load_rows(directory))
    LOG.debug("Opened %r", store)
    try:
        yield store
    finally:
        if store.update_if_modified():
            LOG.debug("Runs in %s updated.", store.directory)
