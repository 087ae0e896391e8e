"""
MPS Export Module

Writes a problem in fixed-format MPS with a QMATRIX section so it can be
handed to any MIQP-capable solver. Fixed format limits names to 8
characters, so rows and columns get sequential codes (``R0000001``,
``C0000001``) and the code-to-label map is written as comment lines.

Author: noomesk
"""

import logging
from pathlib import Path

import numpy as np

from .formulation import MiqpProblem


logger = logging.getLogger(__name__)

OBJECTIVE_ROW = "OBJ"
FIELD_WIDTH = 12


class MpsExportError(Exception):
    """Custom exception for MPS export errors."""
    pass


def format_number(value: float) -> str:
    """Shortest %g rendering of ``value`` that fits a 12-character field."""
    if not np.isfinite(value):
        raise MpsExportError(f"Cannot write non-finite number {value} to MPS")
    for precision in range(12, 0, -1):
        text = f"{value:.{precision}g}"
        if len(text) <= FIELD_WIDTH:
            return text
    raise MpsExportError(f"Number {value} does not fit a fixed-format field")


def _line(f1: str = "", f2: str = "", f3: str = "", f4: str = "", f5: str = "", f6: str = "") -> str:
    text = " " + f1.ljust(2) + " " + f2.ljust(8) + "  " + f3.ljust(8) + "  " + f4.rjust(12)
    if f5:
        text += "   " + f5.ljust(8) + "  " + f6.rjust(12)
    return text.rstrip()


def _row_type(sense: str) -> str:
    return {"E": "E", "L": "L", "G": "G", "R": "G"}[sense]


def export_mps(problem: MiqpProblem, output_path: str, name: str = "EMSMIQP") -> str:
    """Write ``problem`` as fixed-format MPS.

    The objective is ``lin @ x + 0.5 * x' Q x`` with ``Q = diag(2 * quad)``;
    the objective constant is written as the negated RHS of the objective row.

    Args:
        problem (MiqpProblem): Problem to export
        output_path (str): Destination file
        name (str): Problem name (at most 8 characters)

    Returns:
        str: Resolved path of the written file

    Raises:
        MpsExportError: For an empty problem, a bad name or a write failure
    """
    if problem.n_variables == 0:
        raise MpsExportError("Cannot export an empty problem")
    if len(name) > 8:
        raise MpsExportError("MPS problem name must have at most 8 characters")

    n, m = problem.n_variables, problem.n_rows
    row_codes = [f"R{r + 1:07d}" for r in range(m)]
    col_codes = [f"C{k + 1:07d}" for k in range(n)]
    A = problem.A.tocsc()

    lines = [
        "* Fixed-format MPS, objective = c'x + 1/2 x'Qx - RHS(OBJ)",
        f"* variables {n}, integers {problem.n_integers}, rows {m}",
    ]
    lines += [f"* {code} {label}" for code, label in zip(row_codes, problem.row_labels)]
    lines += [f"* {code} {label}" for code, label in zip(col_codes, problem.var_names)]
    lines.append(f"NAME          {name}")

    lines.append("ROWS")
    lines.append(_line("N", OBJECTIVE_ROW))
    lines += [_line(_row_type(sense), code) for sense, code in zip(problem.row_sense, row_codes)]

    lines.append("COLUMNS")
    in_integer_block = False
    marker = 0
    for k in range(n):
        if problem.integer[k] != in_integer_block:
            kind = "'INTORG'" if problem.integer[k] else "'INTEND'"
            lines.append(_line("", f"MARKER{marker:02d}"[:8], "'MARKER'", "", kind))
            marker += 1
            in_integer_block = bool(problem.integer[k])
        entries = []
        if problem.lin[k] != 0.0:
            entries.append((OBJECTIVE_ROW, problem.lin[k]))
        start, stop = A.indptr[k], A.indptr[k + 1]
        entries += [(row_codes[r], v) for r, v in zip(A.indices[start:stop], A.data[start:stop]) if v != 0.0]
        if not entries:
            entries.append((OBJECTIVE_ROW, 0.0))
        for pair in range(0, len(entries), 2):
            row_a, val_a = entries[pair]
            if pair + 1 < len(entries):
                row_b, val_b = entries[pair + 1]
                lines.append(_line("", col_codes[k], row_a, format_number(val_a), row_b, format_number(val_b)))
            else:
                lines.append(_line("", col_codes[k], row_a, format_number(val_a)))
    if in_integer_block:
        lines.append(_line("", f"MARKER{marker:02d}"[:8], "'MARKER'", "", "'INTEND'"))

    lines.append("RHS")
    if problem.constant != 0.0:
        lines.append(_line("", "RHS", OBJECTIVE_ROW, format_number(-problem.constant)))
    ranges = []
    for r, sense in enumerate(problem.row_sense):
        rhs = problem.row_upper[r] if sense == "L" else problem.row_lower[r]
        if rhs != 0.0:
            lines.append(_line("", "RHS", row_codes[r], format_number(rhs)))
        if sense == "R":
            ranges.append(_line("", "RNG", row_codes[r], format_number(problem.row_upper[r] - problem.row_lower[r])))
    if ranges:
        lines.append("RANGES")
        lines += ranges

    lines.append("BOUNDS")
    for k in range(n):
        lo, up = problem.var_lower[k], problem.var_upper[k]
        code = col_codes[k]
        if problem.integer[k] and lo == 0.0 and up == 1.0:
            lines.append(_line("BV", "BND", code))
        elif lo == up:
            lines.append(_line("FX", "BND", code, format_number(lo)))
        elif not np.isfinite(lo) and not np.isfinite(up):
            lines.append(_line("FR", "BND", code))
        else:
            if not np.isfinite(lo):
                lines.append(_line("MI", "BND", code))
            elif lo != 0.0:
                lines.append(_line("LO", "BND", code, format_number(lo)))
            if np.isfinite(up):
                lines.append(_line("UP", "BND", code, format_number(up)))

    quad = np.flatnonzero(problem.quad)
    if quad.size:
        lines.append("QMATRIX")
        lines += [_line("", col_codes[k], col_codes[k], format_number(2.0 * problem.quad[k])) for k in quad]
    lines.append("ENDATA")

    try:
        with open(output_path, "w", encoding="ascii") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as e:
        raise MpsExportError(f"Cannot write MPS file {output_path}: {e}")
    logger.info("Wrote MPS with %d rows and %d columns to %s", m, n, output_path)
    return str(Path(output_path).resolve())
