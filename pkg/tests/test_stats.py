"""
Unit tests for stats module.

Author: noomesk
"""

import csv
import json
import tempfile
from pathlib import Path

import numpy as np
import pytest

from src.formulation import COST_CATEGORIES, Schedule
from src.mpc import account_costs, simulate_schedule
from src.stats import (MANIFEST_FILE, ComparisonError, RunRecord, compare, format_comparison_table, load_run,
                       load_trace, save_report, save_run, save_trace, write_manifest)


def run_record(models, power, demand, label="run"):
    """Simulate a one-stack plan and wrap it as a finished run."""
    power = np.asarray(power, dtype=float)[:, None]
    demand = np.asarray(demand, dtype=float)
    schedule = Schedule(dt=10.0, mode="isc", demand=demand, fc_power=power, fc_on=power > 0,
                        battery_power=demand - power[:, 0], battery_current=np.zeros(demand.size),
                        soc=np.full(demand.size, 50.0), initial_power=(0.0,), initial_on=(False,))
    trace = simulate_schedule(schedule, models, 4.0)
    return RunRecord(label=label, trace=trace, breakdown=account_costs(trace, models), wall_time=1.5)


class TestCompare:
    """Test cases for run comparison."""

    def test_rows_and_summary(self, models_1):
        """Test one row per category plus the total, with b - a deltas."""
        a = run_record(models_1, [14.0, 14.0, 14.0], [40.0, 30.0, 20.0], "idle")
        b = run_record(models_1, [0.0, 0.0, 0.0], [40.0, 30.0, 20.0], "battery")

        report = compare(a, b)

        assert [row["key"] for row in report["rows"]] == list(COST_CATEGORIES) + ["total"]
        total = report["rows"][-1]
        assert total["delta"] == pytest.approx(b.breakdown.total - a.breakdown.total)
        assert total["reduction_pct"] == pytest.approx(-total["delta"] / a.breakdown.total * 100.0)
        assert report["summary"]["idling_reduction_pct"] == pytest.approx(100.0)
        assert report["metadata"]["run_a"] == "idle"
        assert report["metadata"]["n_steps"] == 3

    def test_zero_base_percentages(self, models_1):
        """Test percentages against a zero cost are zero or undefined."""
        a = run_record(models_1, [0.0, 0.0], [0.0, 14.0])
        b = run_record(models_1, [0.0, 14.0], [0.0, 14.0])

        rows = {row["key"]: row for row in compare(a, b)["rows"]}

        assert rows["fc_idling"]["delta_pct"] is None
        assert rows["fc_high_load"]["delta_pct"] == 0.0

    def test_different_profiles_rejected(self, models_1):
        """Test runs on different demand cannot be compared."""
        a = run_record(models_1, [0.0, 0.0], [10.0, 20.0])
        b = run_record(models_1, [0.0, 0.0], [10.0, 25.0])

        with pytest.raises(ComparisonError, match="different demand profiles"):
            compare(a, b)

    def test_different_lengths_rejected(self, models_1):
        """Test runs of different length cannot be compared."""
        a = run_record(models_1, [0.0, 0.0], [10.0, 20.0])
        b = run_record(models_1, [0.0], [10.0])

        with pytest.raises(ComparisonError, match="different profiles"):
            compare(a, b)

    def test_table_format(self, models_1):
        """Test the plain-text table lists every category."""
        a = run_record(models_1, [14.0, 0.0], [20.0, 10.0], "isc")
        b = run_record(models_1, [0.0, 0.0], [20.0, 10.0], "csc")

        table = format_comparison_table(compare(a, b))
        lines = table.splitlines()

        assert lines[0].split() == ["Category", "isc", "csc", "Delta", "Delta", "%"]
        assert set(lines[1]) <= {"-", " "}
        assert len(lines) == 2 + len(COST_CATEGORIES) + 1


class TestSaveReport:
    """Test cases for report files."""

    def test_save_json(self, models_1):
        """Test the JSON report reads back."""
        run = run_record(models_1, [14.0], [20.0])
        report = compare(run, run)

        with tempfile.TemporaryDirectory() as temp_dir:
            path = save_report(report, "json", str(Path(temp_dir) / "report.json"))
            with open(path, encoding="utf-8") as f:
                loaded = json.load(f)

        assert loaded["summary"]["total_a"] == report["summary"]["total_a"]

    def test_save_csv(self, models_1):
        """Test the CSV report has one line per row with full precision."""
        run = run_record(models_1, [14.0], [20.0])
        report = compare(run, run)

        with tempfile.TemporaryDirectory() as temp_dir:
            path = save_report(report, "csv", str(Path(temp_dir) / "report.csv"))
            with open(path, newline="", encoding="utf-8") as f:
                rows = list(csv.reader(f))

        assert rows[0] == ["category", "a", "b", "delta", "delta_pct", "reduction_pct"]
        assert len(rows) == 1 + len(report["rows"])
        assert float(rows[-1][1]) == report["summary"]["total_a"]

    def test_unsupported_format(self):
        """Test unknown formats fail."""
        with tempfile.TemporaryDirectory() as temp_dir:
            with pytest.raises(IOError, match="Unsupported format"):
                save_report({}, "xml", str(Path(temp_dir) / "report.xml"))


class TestRunFiles:
    """Test cases for run directories."""

    def test_trace_round_trip(self, models_1):
        """Test the trace reads back exactly."""
        run = run_record(models_1, [14.0, 56.0, 0.0], [30.0, 50.0, -5.0])

        with tempfile.TemporaryDirectory() as temp_dir:
            save_trace(run.trace, temp_dir)
            trace = load_trace(temp_dir)

        np.testing.assert_array_equal(trace.fc_power, run.trace.fc_power)
        np.testing.assert_array_equal(trace.fc_on, run.trace.fc_on)
        np.testing.assert_array_equal(trace.soc, run.trace.soc)
        np.testing.assert_array_equal(trace.battery_current, run.trace.battery_current)

    def test_run_round_trip(self, models_1):
        """Test a saved run loads with the same breakdown and cost columns."""
        run = run_record(models_1, [14.0, 56.0, 0.0], [30.0, 50.0, -5.0], "mpc-isc")

        with tempfile.TemporaryDirectory() as temp_dir:
            save_run(run, temp_dir, models_1)
            header = (Path(temp_dir) / "trace.csv").read_text(encoding="utf-8").splitlines()[0].split(",")
            loaded = load_run(temp_dir)

        assert loaded.label == "mpc-isc"
        assert loaded.breakdown == run.breakdown
        assert loaded.wall_time == 1.5
        assert "cost_fc_idling" in header

    def test_missing_run(self):
        """Test an empty directory is not a run."""
        with tempfile.TemporaryDirectory() as temp_dir:
            with pytest.raises(ComparisonError, match="Cannot read run trace"):
                load_run(temp_dir)

    def test_manifest(self):
        """Test the manifest records the command, hash and outputs."""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = write_manifest(temp_dir, "optimize", "abc123", {"mode": "isc"},
                                  outputs=[str(Path(temp_dir) / "trace.csv")])
            with open(path, encoding="utf-8") as f:
                manifest = json.load(f)

        assert Path(path).name == MANIFEST_FILE
        assert manifest["command"] == "optimize"
        assert manifest["config_hash"] == "abc123"
        assert manifest["seed"] == 0
        assert manifest["outputs"] == ["trace.csv"]
        assert "numpy" in manifest["versions"]
        assert manifest["started_at"] <= manifest["finished_at"]
