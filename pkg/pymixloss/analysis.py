"""Evaluation statistics for method comparisons.

Accuracy tables are ``methods x experiments``. Rank 1 is the most accurate
method of an experiment; tied methods share the average of their ranks.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from .core import FLOAT, softmax
from .exceptions import AnalysisError, InvalidInput

LOG = logging.getLogger(__name__)

DEFAULT_BUCKET_THRESHOLD = 0.2
DEFAULT_TAUS = tuple(np.round(np.linspace(0.5, 1.0, 51), 10))

# Relative slack when comparing accuracy ratios; 0.875 * 0.8 > 0.7 in
# binary floating point.
PROFILE_RTOL = 1e-12

FAILED_SUFFIX = ":failed"
EXPERIMENT_COLUMN = "experiment"

PathLike = Union[str, os.PathLike]


@dataclass
class BucketSnapshot:
    """Per-sample correctness and target probability at one epoch."""

    epoch: int
    sample_ids: np.ndarray
    correct: np.ndarray
    p_y: np.ndarray
    threshold: float = DEFAULT_BUCKET_THRESHOLD

    def __post_init__(self):
        """Validate the snapshot."""
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        self.correct = np.asarray(self.correct, dtype=bool)
        self.p_y = np.asarray(self.p_y, dtype=FLOAT)
        size = self.sample_ids.size
        if self.correct.shape != (size,) or self.p_y.shape != (size,):
            raise InvalidInput("snapshot columns have different lengths")
        if np.unique(self.sample_ids).size != size:
            raise InvalidInput("snapshot sample ids are not unique")
        if np.any(~((self.p_y >= 0.0) & (self.p_y <= 1.0))):
            raise InvalidInput("snapshot p_y outside [0, 1]")

    @classmethod
    def from_logits(
        cls,
        epoch: int,
        logits: np.ndarray,
        labels: np.ndarray,
        threshold: float = DEFAULT_BUCKET_THRESHOLD,
    ) -> "BucketSnapshot":
        """Build a snapshot from model outputs; ids are row numbers."""
        probs = np.atleast_2d(softmax(logits))
        labels = np.asarray(labels, dtype=np.int64)
        rows = np.arange(labels.size)
        return cls(
            epoch,
            rows,
            probs.argmax(axis=1) == labels,
            probs[rows, labels],
            threshold,
        )


class BucketPartition(NamedTuple):
    """Correct samples, and misclassified ones above / at-or-below theta."""

    correct: frozenset
    high: frozenset
    low: frozenset


BUCKETS = BucketPartition._fields


def bucket_partition(snapshot: BucketSnapshot) -> BucketPartition:
    """Partition sample ids; p_y equal to the threshold counts as low."""
    ids = snapshot.sample_ids
    wrong = ~snapshot.correct
    high = wrong & (snapshot.p_y > snapshot.threshold)
    return BucketPartition(
        frozenset(ids[snapshot.correct].tolist()),
        frozenset(ids[high].tolist()),
        frozenset(ids[wrong & ~high].tolist()),
    )


def format_rate(count: int, total: int) -> str:
    """Return ``count / total`` as a percentage with 2 decimals."""
    if total == 0:
        return "n/a"
    return f"{100.0 * count / total:.2f}%"


@dataclass
class TransitionTable:
    """Late-epoch outcome of every early-epoch bucket.

    ``counts[i, 0]`` samples of early bucket ``i`` are correct at the late
    epoch and ``counts[i, 1]`` are not. Rows follow :data:`BUCKETS`.
    """

    counts: np.ndarray
    early_epoch: int
    late_epoch: int

    @property
    def totals(self) -> np.ndarray:
        """Size of each early bucket."""
        return self.counts.sum(axis=1)

    @property
    def rates(self) -> np.ndarray:
        """Percentages per row; NaN for empty buckets."""
        totals = self.totals[:, None].astype(FLOAT)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, 100.0 * self.counts / totals, np.nan)

    def formatted(self) -> Dict[str, Tuple[str, str]]:
        """Return the rates formatted like ``3.35%`` per early bucket."""
        return {
            name: (
                format_rate(self.counts[i, 0], self.totals[i]),
                format_rate(self.counts[i, 1], self.totals[i]),
            )
            for i, name in enumerate(BUCKETS)
        }

    def to_frame(self) -> pd.DataFrame:
        """Return the table as a DataFrame indexed by early bucket."""
        frame = pd.DataFrame(
            self.counts,
            index=pd.Index(BUCKETS, name=f"epoch_{self.early_epoch}"),
            columns=["late_correct", "late_incorrect"],
        )
        rates = self.rates
        frame["late_correct_pct"] = rates[:, 0]
        frame["late_incorrect_pct"] = rates[:, 1]
        return frame


def bucket_transition(
    early: BucketSnapshot, late: BucketSnapshot
) -> TransitionTable:
    """Count where the samples of every early bucket end up later."""
    if set(early.sample_ids.tolist()) != set(late.sample_ids.tolist()):
        raise AnalysisError("snapshots cover different samples")
    late_correct = frozenset(late.sample_ids[late.correct].tolist())
    counts = np.zeros((len(BUCKETS), 2), dtype=np.int64)
    for row, members in enumerate(bucket_partition(early)):
        hits = len(members & late_correct)
        counts[row] = (hits, len(members) - hits)
    return TransitionTable(counts, early.epoch, late.epoch)


@dataclass
class AccuracyTable:
    """Final accuracies, ``values[m, e]`` for method m on experiment e."""

    methods: Tuple[str, ...]
    experiments: Tuple[str, ...]
    values: np.ndarray
    failed: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        """Validate the table."""
        self.methods = tuple(self.methods)
        self.experiments = tuple(self.experiments)
        self.values = np.asarray(self.values, dtype=FLOAT)
        shape = (len(self.methods), len(self.experiments))
        if self.values.shape != shape:
            raise InvalidInput(
                f"values have shape {self.values.shape}, expected {shape}"
            )
        if self.failed is None:
            self.failed = np.zeros(shape, dtype=bool)
        self.failed = np.asarray(self.failed, dtype=bool)
        if self.failed.shape != shape:
            raise InvalidInput("failure flags do not match the values")
        if len(set(self.methods)) != len(self.methods):
            raise InvalidInput(f"duplicate method names: {self.methods}")
        if len(set(self.experiments)) != len(self.experiments):
            raise InvalidInput("duplicate experiment names")
        if np.any(~((self.values >= 0.0) & (self.values <= 1.0))):
            raise InvalidInput("accuracies must lie in [0, 1]")
        if np.any(self.values[self.failed] != 0.0):
            raise InvalidInput("failed cells must hold accuracy 0")

    @property
    def shape(self) -> Tuple[int, int]:
        """(methods, experiments)."""
        return self.values.shape

    def method_index(self, name: str) -> int:
        """Return the row of method ``name``."""
        try:
            return self.methods.index(name)
        except ValueError as exc:
            raise AnalysisError(
                f"unknown method {name!r}, table has {self.methods}"
            ) from exc

    def to_frame(self) -> pd.DataFrame:
        """Return one row per experiment and one column per method."""
        frame = pd.DataFrame(
            self.values.T,
            index=pd.Index(self.experiments, name=EXPERIMENT_COLUMN),
            columns=list(self.methods),
        )
        if self.failed.any():
            for row, method in enumerate(self.methods):
                frame[method + FAILED_SUFFIX] = self.failed[row].astype(int)
        return frame

    def to_csv(self, path: PathLike):
        """Write the table; failure flags are extra ``:failed`` columns."""
        self.to_frame().to_csv(path, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: PathLike) -> "AccuracyTable":
        """Read a table written by :meth:`to_csv`."""
        try:
            frame = pd.read_csv(path, index_col=0)
        except (OSError, pd.errors.ParserError) as exc:
            raise AnalysisError(f"{path}: cannot read table ({exc})") from exc
        except pd.errors.EmptyDataError as exc:
            raise AnalysisError(f"{path}: table is empty") from exc
        methods = [c for c in frame.columns if not c.endswith(FAILED_SUFFIX)]
        failed = np.zeros((len(methods), len(frame)), dtype=bool)
        for row, method in enumerate(methods):
            flag = method + FAILED_SUFFIX
            if flag in frame.columns:
                failed[row] = frame[flag].to_numpy().astype(bool)
        return cls(
            tuple(methods),
            tuple(str(e) for e in frame.index),
            frame[methods].to_numpy(dtype=FLOAT).T,
            failed,
        )


def _require_experiments(table: AccuracyTable) -> None:
    if table.values.size == 0:
        raise AnalysisError("accuracy table is empty")


def dolan_more_profile(
    table: AccuracyTable, taus: Sequence[float] = DEFAULT_TAUS
) -> pd.DataFrame:
    """Fraction of experiments where a method reaches tau times the best.

    Returns a frame with a ``tau`` column followed by one column per method.
    An experiment on which every method scored 0 counts as reached by none.
    """
    _require_experiments(table)
    taus = np.asarray(taus, dtype=FLOAT)
    if np.any(~((taus > 0.0) & (taus <= 1.0))):
        raise InvalidInput("tau values must lie in (0, 1]")
    best = table.values.max(axis=0)
    solved = best > 0.0
    if not solved.all():
        LOG.warning(
            "No method scored above 0 on %s",
            ", ".join(np.asarray(table.experiments)[~solved]),
        )
    # (taus, methods, experiments)
    limits = taus[:, None, None] * best[None, None, :]
    reached = table.values[None, :, :] >= limits - PROFILE_RTOL * best
    reached &= solved[None, None, :]
    fractions = reached.mean(axis=2)
    frame = pd.DataFrame(fractions, columns=list(table.methods))
    frame.insert(0, "tau", taus)
    return frame


def method_ranks(table: AccuracyTable) -> np.ndarray:
    """Rank of every method within every experiment; ties are averaged."""
    return stats.rankdata(-table.values, method="average", axis=0)


def summary_stats(table: AccuracyTable, baseline: str) -> pd.DataFrame:
    """Return wins, mean accuracy gain over ``baseline`` and mean rank."""
    _require_experiments(table)
    reference = table.values[table.method_index(baseline)]
    best = table.values.max(axis=0)
    frame = pd.DataFrame(
        {
            "wins": (table.values >= best).sum(axis=1),
            "delta_acc": (table.values - reference).mean(axis=1),
            "mean_rank": method_ranks(table).mean(axis=1),
        },
        index=pd.Index(table.methods, name="method"),
    )
    return frame


class FriedmanResult(NamedTuple):
    """Friedman test with the Iman-Davenport F correction."""

    statistic: float
    dof: int
    p_value: float
    iman_davenport: float
    iman_davenport_p_value: float


def friedman_statistic(table: AccuracyTable) -> FriedmanResult:
    """Friedman rank-sum test treating experiments as blocks.

    Ties within a block share average ranks and the statistic is divided by
    ``1 - sum(t^3 - t) / (N (k^3 - k))``. A table whose blocks are entirely
    tied has statistic 0.
    """
    methods, blocks = table.shape
    if methods < 2 or blocks < 2:
        raise AnalysisError(
            f"need at least 2 methods and 2 experiments, got {table.shape}"
        )
    ranks = method_ranks(table)
    mean_ranks = ranks.mean(axis=1)
    spread = np.sum((mean_ranks - (methods + 1) / 2.0) ** 2)
    statistic = 12.0 * blocks / (methods * (methods + 1)) * spread

    ties = 0.0
    for column in table.values.T:
        _, counts = np.unique(column, return_counts=True)
        ties += float(np.sum(counts ** 3 - counts))
    correction = 1.0 - ties / (blocks * (methods ** 3 - methods))
    if statistic == 0.0 or correction <= 0.0:
        statistic = 0.0
    else:
        statistic /= correction
    dof = methods - 1
    p_value = float(stats.chi2.sf(statistic, dof))

    denominator = blocks * dof - statistic
    if denominator <= 0.0:
        iman, iman_p = float("inf"), 0.0
    else:
        iman = (blocks - 1) * statistic / denominator
        iman_p = float(stats.f.sf(iman, dof, dof * (blocks - 1)))
    LOG.debug(
        "Friedman: chi2=%g dof=%d p=%g (Iman-Davenport F=%g)",
        statistic,
        dof,
        p_value,
        iman,
    )
    return FriedmanResult(float(statistic), dof, p_value, float(iman), iman_p)
