"""Comparison reports over an accuracy table."""
import json
import logging
import os
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import pandas as pd

from ..analysis import (
    DEFAULT_TAUS,
    AccuracyTable,
    FriedmanResult,
    dolan_more_profile,
    friedman_statistic,
    method_ranks,
    summary_stats,
)
from ..exceptions import AnalysisError
from ..results.store import load_rows
from .grid import ACCURACY_FILE, accuracy_table

LOG = logging.getLogger(__name__)

SUMMARY_FILE = "summary.csv"
PROFILE_FILE = "profile.csv"
FRIEDMAN_FILE = "friedman.json"
TABLE_FILE = "table.txt"

PathLike = Union[str, os.PathLike]


@dataclass
class Report:
    """Summary statistics of a method comparison."""

    table: AccuracyTable
    baseline: str
    summary: pd.DataFrame
    profile: pd.DataFrame
    friedman: Optional[FriedmanResult]

    def text(self) -> str:
        """Return accuracies (%) per experiment followed by the summary."""
        cells = [
            [
                "failed" if flag else f"{value * 100.0:.2f}"
                for value, flag in zip(values, flags)
            ]
            for values, flags in zip(self.table.values.T, self.table.failed.T)
        ]
        frame = pd.DataFrame(
            cells,
            index=list(self.table.experiments),
            columns=list(self.table.methods),
        )
        frame.loc["wins"] = [str(int(v)) for v in self.summary["wins"]]
        frame.loc["delta acc"] = [
            f"{v * 100.0:+.2f}" for v in self.summary["delta_acc"]
        ]
        frame.loc["mean rank"] = [
            f"{v:.2f}" for v in self.summary["mean_rank"]
        ]
        lines = [frame.to_string(), ""]
        lines.append(f"baseline: {self.baseline}")
        if self.friedman is not None:
            lines.append(
                "Friedman chi2 = {:.4f} (dof {}, p = {:.4g}); "
                "Iman-Davenport F = {:.4f} (p = {:.4g})".format(
                    self.friedman.statistic,
                    self.friedman.dof,
                    self.friedman.p_value,
                    self.friedman.iman_davenport,
                    self.friedman.iman_davenport_p_value,
                )
            )
        return "\n".join(lines) + "\n"

    def write(self, directory: PathLike) -> None:
        """Write every part of the report into ``directory``."""
        os.makedirs(directory, exist_ok=True)
        self.summary.to_csv(
            os.path.join(directory, SUMMARY_FILE), float_format="%.17g"
        )
        self.profile.to_csv(
            os.path.join(directory, PROFILE_FILE),
            index=False,
            float_format="%.17g",
        )
        if self.friedman is not None:
            with open(
                os.path.join(directory, FRIEDMAN_FILE), "w", encoding="utf-8"
            ) as stream:
                json.dump(self.friedman._asdict(), stream, indent=2)
        with open(
            os.path.join(directory, TABLE_FILE), "w", encoding="utf-8"
        ) as stream:
            stream.write(self.text())


def build_report(
    table: AccuracyTable,
    baseline: str,
    taus: Sequence[float] = DEFAULT_TAUS,
) -> Report:
    """Compute summary statistics, profile and Friedman test of ``table``.

    The Friedman test is skipped when the table has fewer than two methods
    or experiments.

    Raises:
        AnalysisError when the table is empty or lacks ``baseline``.
    """
    if table.values.size == 0:
        raise AnalysisError("accuracy table is empty")
    table.method_index(baseline)
    friedman = None
    methods, experiments = table.shape
    if methods >= 2 and experiments >= 2:
        friedman = friedman_statistic(table)
    else:
        LOG.warning(
            "Skipping the Friedman test for a %dx%d table",
            methods,
            experiments,
        )
    LOG.debug("Mean ranks: %s", method_ranks(table).mean(axis=1))
    return Report(
        table,
        baseline,
        summary_stats(table, baseline),
        dolan_more_profile(table, taus),
        friedman,
    )


def load_table(
    directory: PathLike, methods: Optional[Sequence[str]] = None
) -> AccuracyTable:
    """Read the accuracy table of a grid output directory.

    The aggregated table is used when present, otherwise it is rebuilt from
    the per-run summary rows.
    """
    path = os.path.join(directory, ACCURACY_FILE)
    if os.path.exists(path):
        table = AccuracyTable.from_csv(path)
        if methods is not None:
            rows = [table.method_index(m) for m in methods]
            table = AccuracyTable(
                tuple(methods),
                table.experiments,
                table.values[rows],
                table.failed[rows],
            )
        return table
    return accuracy_table(load_rows(directory), methods=methods)
