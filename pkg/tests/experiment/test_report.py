"""Tests for comparison reports."""

import json
import logging

import numpy as np
import pytest

from pymixloss.analysis import AccuracyTable
from pymixloss.exceptions import AnalysisError
from pymixloss.experiment import report
from pymixloss.experiment.grid import ACCURACY_FILE
from pymixloss.results.rows import RunSummaryRow
from pymixloss.results.store import SUMMARY_FILE

MOCK_TABLE = AccuracyTable(
    ("CE", "F=0", "F=0-0.5"),
    ("iris", "wine", "glass", "seeds"),
    np.array(
        [
            [0.90, 0.80, 0.60, 0.70],
            [0.85, 0.90, 0.65, 0.75],
            [0.95, 0.85, 0.00, 0.80],
        ]
    ),
    np.array(
        [
            [False, False, False, False],
            [False, False, False, False],
            [False, False, True, False],
        ]
    ),
)


def test_build_report():
    result = report.build_report(MOCK_TABLE, "CE")
    assert list(result.summary.index) == list(MOCK_TABLE.methods)
    assert result.summary.loc["CE", "delta_acc"] == 0.0
    assert result.summary["wins"].tolist() == [0, 2, 2]
    assert result.friedman is not None
    assert result.friedman.dof == 2
    assert list(result.profile.columns) == ["tau", *MOCK_TABLE.methods]
    text = result.text()
    assert "baseline: CE" in text
    assert "Friedman chi2" in text
    assert "failed" in text
    assert "95.00" in text


def test_single_method_report(caplog):
    table = AccuracyTable(("CE",), ("iris",), np.array([[0.9]]))
    with caplog.at_level(logging.WARNING):
        result = report.build_report(table, "CE")
    assert result.friedman is None
    assert "Skipping the Friedman test" in caplog.text
    assert result.summary.loc["CE", "delta_acc"] == 0.0
    assert result.summary.loc["CE", "mean_rank"] == 1.0
    assert "Friedman" not in result.text()


def test_report_with_an_experiment_every_method_failed(caplog, tmp_path):
    table = AccuracyTable(
        ("CE", "F=0"),
        ("iris", "wine"),
        np.array([[0.0, 0.9], [0.0, 0.8]]),
        np.array([[True, False], [True, False]]),
    )
    with caplog.at_level(logging.WARNING):
        result = report.build_report(table, "CE")
    assert "No method scored above 0 on iris" in caplog.text
    at_one = result.profile.iloc[-1]
    assert at_one["tau"] == 1.0
    assert at_one["CE"] == 0.5
    assert at_one["F=0"] == 0.0
    assert result.summary.loc["F=0", "delta_acc"] == pytest.approx(-0.05)
    assert result.friedman is not None
    result.write(tmp_path)
    assert (tmp_path / report.TABLE_FILE).exists()


def test_missing_baseline_or_empty_table():
    with pytest.raises(AnalysisError):
        report.build_report(MOCK_TABLE, "EL")
    empty = AccuracyTable((), (), np.zeros((0, 0)))
    with pytest.raises(AnalysisError):
        report.build_report(empty, "CE")


def test_write(tmp_path):
    result = report.build_report(MOCK_TABLE, "CE")
    result.write(tmp_path / "report")
    out = tmp_path / "report"
    for name in (
        report.SUMMARY_FILE,
        report.PROFILE_FILE,
        report.FRIEDMAN_FILE,
        report.TABLE_FILE,
    ):
        assert (out / name).exists()
    with open(out / report.FRIEDMAN_FILE, encoding="utf-8") as stream:
        friedman = json.load(stream)
    assert friedman["statistic"] == pytest.approx(result.friedman.statistic)
    assert (out / report.TABLE_FILE).read_text() == result.text()


def test_load_table_prefers_the_aggregate(tmp_path):
    MOCK_TABLE.to_csv(tmp_path / ACCURACY_FILE)
    table = report.load_table(tmp_path)
    np.testing.assert_allclose(table.values, MOCK_TABLE.values)
    subset = report.load_table(tmp_path, ["F=0-0.5", "CE"])
    assert subset.methods == ("F=0-0.5", "CE")
    np.testing.assert_array_equal(subset.failed[0], MOCK_TABLE.failed[2])
    with pytest.raises(AnalysisError):
        report.load_table(tmp_path, ["EL"])


def test_load_table_from_run_rows(tmp_path):
    rows = []
    for method, acc in (("CE", 0.5), ("EL", 0.75)):
        row = RunSummaryRow(
            run_id=method,
            dataset="iris",
            architecture="linear",
            method=method,
            seed=0,
        )
        row.test_acc = acc
        row.failed = False
        rows.append(row)
    RunSummaryRow.write_csv(tmp_path / SUMMARY_FILE, rows)
    table = report.load_table(tmp_path)
    assert table.methods == ("CE", "EL")
    assert table.values.tolist() == [[0.5], [0.75]]


def test_load_table_without_runs(tmp_path):
    with pytest.raises(AnalysisError):
        report.load_table(tmp_path)
