"""
Statistics and Reporting Module

This module compares the cost breakdowns of two runs, saves reports in JSON
or CSV, and reads/writes the run artifacts (trace, breakdown, manifest) that
the command line produces.

Author: noomesk
"""

import csv
import json
import platform
from dataclasses import dataclass, field
from datetime import datetime
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from . import __version__
from .formulation import COST_CATEGORIES
from .mpc import CostBreakdown, SimulationTrace, step_costs


CATEGORY_LABELS = {
    "battery_degradation": "Battery degradation",
    "h2_cost": "H2 consumption",
    "fc_idling": "FC idling",
    "fc_high_load": "FC high load",
    "fc_load_change": "FC load change",
    "fc_on_off": "FC on/off",
    "total": "Total",
}

TRACE_FILE = "trace.csv"
TRACE_META_FILE = "trace.meta.json"
BREAKDOWN_FILE = "breakdown.json"
MANIFEST_FILE = "manifest.json"

REPORTED_PACKAGES = ("numpy", "scipy", "pandas", "osqp", "click", "rich", "tenacity", "jsonschema", "toml")


class ComparisonError(Exception):
    """Custom exception for run comparison and run artifact errors."""
    pass


@dataclass(frozen=True, eq=False)
class RunRecord:
    """A finished run as loaded from, or about to be written to, a run directory."""

    label: str
    trace: SimulationTrace
    breakdown: CostBreakdown
    wall_time: float = 0.0
    metadata: Dict = field(default_factory=dict)


def _percent(delta: float, base: float) -> Optional[float]:
    if base == 0.0:
        return 0.0 if delta == 0.0 else None
    return delta / base * 100.0


def compare(run_a: RunRecord, run_b: RunRecord) -> Dict:
    """Build a category-by-category comparison of two runs on the same profile.

    ``delta`` is b - a; ``reduction_pct`` is the share of a's cost that b saves.

    Args:
        run_a (RunRecord): Reference run
        run_b (RunRecord): Compared run

    Returns:
        Dict: Report with ``metadata``, ``rows`` and ``summary``

    Raises:
        ComparisonError: If the runs were made on different demand profiles
    """
    trace_a, trace_b = run_a.trace, run_b.trace
    if trace_a.dt != trace_b.dt or trace_a.n_steps != trace_b.n_steps:
        raise ComparisonError(
            f"Runs cover different profiles ({trace_a.n_steps} x {trace_a.dt} s vs "
            f"{trace_b.n_steps} x {trace_b.dt} s)"
        )
    if not np.allclose(trace_a.requested_demand, trace_b.requested_demand, rtol=0.0, atol=1e-9):
        raise ComparisonError("Runs were made on different demand profiles")

    costs_a, costs_b = run_a.breakdown.as_dict(), run_b.breakdown.as_dict()
    rows = []
    for key in COST_CATEGORIES + ("total",):
        a, b = costs_a[key], costs_b[key]
        delta = b - a
        reduction = _percent(-delta, a)
        rows.append({
            "key": key,
            "category": CATEGORY_LABELS[key],
            "a": a,
            "b": b,
            "delta": delta,
            "delta_pct": _percent(delta, a),
            "reduction_pct": reduction,
        })

    by_key = {row["key"]: row for row in rows}
    return {
        "metadata": {
            "generated_at": datetime.now().isoformat(),
            "tool_version": __version__,
            "run_a": run_a.label,
            "run_b": run_b.label,
            "n_steps": trace_a.n_steps,
            "dt": trace_a.dt,
        },
        "rows": rows,
        "summary": {
            "total_a": costs_a["total"],
            "total_b": costs_b["total"],
            "total_reduction_pct": by_key["total"]["reduction_pct"],
            "idling_reduction_pct": by_key["fc_idling"]["reduction_pct"],
            "degradation_a": costs_a["total"] - costs_a["h2_cost"],
            "degradation_b": costs_b["total"] - costs_b["h2_cost"],
            "soh_end_a": float(trace_a.soh[-1]),
            "soh_end_b": float(trace_b.soh[-1]),
            "wall_time_a_s": run_a.wall_time,
            "wall_time_b_s": run_b.wall_time,
        },
    }


def _format_pct(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:+.2f}%"


def format_comparison_table(report: Dict) -> str:
    """Plain-text table of a comparison report."""
    meta = report["metadata"]
    header = ("Category", str(meta["run_a"]), str(meta["run_b"]), "Delta", "Delta %")
    lines = [header]
    for row in report["rows"]:
        lines.append((row["category"], f"{row['a']:.6f}", f"{row['b']:.6f}",
                      f"{row['delta']:+.6f}", _format_pct(row["delta_pct"])))
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    text = []
    for n, line in enumerate(lines):
        cells = [line[0].ljust(widths[0])] + [cell.rjust(width) for cell, width in zip(line[1:], widths[1:])]
        text.append("  ".join(cells))
        if n == 0:
            text.append("  ".join("-" * width for width in widths))
    return "\n".join(text) + "\n"


def save_report(report: Dict, format: str, output_path: str = None) -> str:
    """Save report to file in specified format.

    Args:
        report (Dict): Report dictionary
        format (str): Output format ("csv" or "json")
        output_path (str, optional): Custom output path

    Returns:
        str: Path to the saved file
    """
    if output_path is None:
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        filename = f"ems_report_{timestamp}.{format}"
    else:
        filename = output_path

    try:
        if format.lower() == "json":
            _save_json_report(report, filename)
        elif format.lower() == "csv":
            _save_csv_report(report, filename)
        else:
            raise ValueError(f"Unsupported format: {format}. Use 'json' or 'csv'")

        return str(Path(filename).resolve())

    except Exception as e:
        raise IOError(f"Error saving report: {str(e)}")


def _save_json_report(report: Dict, filename: str) -> None:
    with open(filename, 'w', encoding='utf-8') as f:
        json.dump(report, f, indent=2, ensure_ascii=False)


def _save_csv_report(report: Dict, filename: str) -> None:
    with open(filename, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(["category", "a", "b", "delta", "delta_pct", "reduction_pct"])
        for row in report.get("rows", []):
            writer.writerow([row["category"], repr(row["a"]), repr(row["b"]), repr(row["delta"]),
                             "" if row["delta_pct"] is None else repr(row["delta_pct"]),
                             "" if row["reduction_pct"] is None else repr(row["reduction_pct"])])


def _write_json(data: Dict, path: Path) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False)


def save_trace(trace: SimulationTrace, run_dir: str, costs: Optional[Dict[str, np.ndarray]] = None) -> str:
    """Write ``trace.csv`` (full float precision) and ``trace.meta.json``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    trace.to_frame(costs).to_csv(run_dir / TRACE_FILE, index=False, lineterminator="\n", float_format="%.17g")
    _write_json(trace.metadata(), run_dir / TRACE_META_FILE)
    return str((run_dir / TRACE_FILE).resolve())


def load_trace(run_dir: str) -> SimulationTrace:
    """Read the trace of a run directory.

    Raises:
        ComparisonError: If the trace files are missing or malformed
    """
    run_dir = Path(run_dir)
    try:
        frame = pd.read_csv(run_dir / TRACE_FILE)
        with open(run_dir / TRACE_META_FILE, encoding='utf-8') as f:
            meta = json.load(f)
        return SimulationTrace.from_frame(frame, meta)
    except (OSError, ValueError, KeyError) as e:
        raise ComparisonError(f"Cannot read run trace in {run_dir}: {e}")
    except Exception as e:
        raise ComparisonError(f"Invalid run trace in {run_dir}: {e}")


def save_run(record: RunRecord, run_dir: str, models=None) -> List[str]:
    """Write trace, trace metadata and cost breakdown of a run.

    Args:
        record (RunRecord): Run to save
        run_dir (str): Target directory (created if needed)
        models (SystemModels, optional): Adds per-step cost columns to the trace

    Returns:
        List[str]: Paths of the written files
    """
    run_dir = Path(run_dir)
    costs = step_costs(record.trace, models) if models is not None else None
    paths = [save_trace(record.trace, run_dir, costs)]
    breakdown = dict(record.breakdown.as_dict())
    breakdown.update({"label": record.label, "wall_time_s": record.wall_time,
                      "soh_end": float(record.trace.soh[-1])})
    breakdown.update({key: value for key, value in record.metadata.items() if key not in breakdown})
    _write_json(breakdown, run_dir / BREAKDOWN_FILE)
    paths.append(str((run_dir / BREAKDOWN_FILE).resolve()))
    return paths


def load_run(run_dir: str, label: Optional[str] = None) -> RunRecord:
    """Load a run directory written by ``save_run``."""
    run_dir = Path(run_dir)
    trace = load_trace(run_dir)
    try:
        with open(run_dir / BREAKDOWN_FILE, encoding='utf-8') as f:
            breakdown = json.load(f)
    except (OSError, ValueError) as e:
        raise ComparisonError(f"Cannot read cost breakdown in {run_dir}: {e}")
    return RunRecord(
        label=label or breakdown.get("label") or run_dir.name,
        trace=trace,
        breakdown=CostBreakdown.from_dict(breakdown),
        wall_time=float(breakdown.get("wall_time_s", 0.0)),
        metadata=breakdown,
    )


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in REPORTED_PACKAGES:
        try:
            versions[name] = importlib_metadata.version(name)
        except importlib_metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


def write_manifest(run_dir: str, command: str, config_hash: str, settings: Dict,
                   outputs: Optional[List[str]] = None, started_at: Optional[datetime] = None) -> str:
    """Record what produced a run directory.

    The core is deterministic; ``seed`` is always 0.

    Returns:
        str: Path of ``manifest.json``
    """
    manifest = {
        "generated_at": datetime.now().isoformat(),
        "tool_version": __version__,
        "command": command,
        "config_hash": config_hash,
        "seed": 0,
        "started_at": (started_at or datetime.now()).isoformat(),
        "finished_at": datetime.now().isoformat(),
        "settings": settings,
        "versions": package_versions(),
        "outputs": sorted(Path(p).name for p in (outputs or [])),
    }
    path = Path(run_dir) / MANIFEST_FILE
    _write_json(manifest, path)
    return str(path.resolve())
