"""
Numeric Table Parser Module

This module provides functions to parse the small CSV tables the tool consumes
(drive cycles, battery curve tables, fuel-curve samples and power profiles)
into validated numeric columns. Every error names the file line it refers to.

Author: noomesk
"""

import io
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd


class ParsingError(Exception):
    """Custom exception for parsing errors."""
    pass


def _is_numeric_token(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _has_header(first_line: str) -> bool:
    """Check whether the first non-blank line is a header row.

    Args:
        first_line (str): First non-blank line of the file

    Returns:
        bool: True unless every field parses as a number
    """
    fields = [field.strip() for field in first_line.split(",")]
    return not all(fields) or not all(_is_numeric_token(field) for field in fields)


def read_numeric_table(file_path: str, required: Sequence[str],
                       optional: Sequence[str] = ()) -> Dict[str, np.ndarray]:
    """Load a CSV table of finite floats.

    A file whose first line is numeric is read as headerless, with columns
    taken in the order ``required`` then ``optional``.

    Args:
        file_path (str): Path to the CSV file
        required (Sequence[str]): Column names that must be present
        optional (Sequence[str]): Column names that may be present

    Returns:
        Dict[str, np.ndarray]: Column name to float array, in file order

    Raises:
        FileNotFoundError: If the file does not exist
        ParsingError: On empty files, unknown or missing columns, ragged rows
            and non-numeric or non-finite values
    """
    return _read_table(file_path, required, optional)[0]


def _read_table(file_path: str, required: Sequence[str],
                optional: Sequence[str]) -> Tuple[Dict[str, np.ndarray], List[int]]:
    """Columns plus the file line number of every data row (blank lines counted)."""
    path = Path(file_path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {file_path}")

    try:
        text = path.read_text(encoding="utf-8-sig")
    except (IOError, OSError, UnicodeDecodeError) as e:
        raise ParsingError(f"Error reading file: {str(e)}")

    numbered = [(number, line) for number, line in enumerate(text.splitlines(), start=1) if line.strip()]
    if not numbered:
        raise ParsingError(f"{path.name}: no samples")
    lines = [line for _, line in numbered]
    header_line = numbered[0][0]

    allowed = list(required) + list(optional)
    header = _has_header(lines[0])
    n_fields = len(lines[0].split(","))
    if not header and n_fields > len(allowed):
        raise ParsingError(f"{path.name}, line {header_line}: expected at most {len(allowed)} fields, saw {n_fields}")

    try:
        frame = pd.read_csv(
            io.StringIO("\n".join(lines)),
            dtype=str,
            header=0 if header else None,
            names=None if header else allowed[:n_fields],
            skipinitialspace=True,
            keep_default_na=False,
        )
    except pd.errors.EmptyDataError:
        raise ParsingError(f"{path.name}: no samples")
    except pd.errors.ParserError as e:
        raise ParsingError(f"{path.name}: {str(e).strip()}")

    frame.columns = [str(column).strip() for column in frame.columns]
    unknown = [column for column in frame.columns if column not in allowed]
    if unknown:
        raise ParsingError(f"{path.name}, line {header_line}: unknown column(s) {', '.join(unknown)}")
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise ParsingError(f"{path.name}, line {header_line}: missing column(s) {', '.join(missing)}")
    if frame.empty:
        raise ParsingError(f"{path.name}: no samples")

    data_lines = [number for number, _ in numbered[1 if header else 0:]]
    columns: Dict[str, np.ndarray] = {}
    for column in frame.columns:
        raw = frame[column]
        values = pd.to_numeric(raw.astype(str).str.strip().replace("nan", ""), errors="coerce")
        array = values.to_numpy(dtype=float)
        bad = ~np.isfinite(array)
        if bad.any():
            row = int(np.argmax(bad))
            raise ParsingError(
                f"{path.name}, line {data_lines[row]}: invalid value "
                f"'{raw.iloc[row]}' in column '{column}'"
            )
        columns[column] = array

    return columns, data_lines


def load_curve_table(file_path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Load a piecewise-linear curve table with columns ``soc_pct,value``.

    Args:
        file_path (str): Path to the curve CSV

    Returns:
        Tuple[np.ndarray, np.ndarray]: Breakpoints (SOC %) and values

    Raises:
        ParsingError: If the table is malformed or breakpoints do not increase
    """
    table, data_lines = _read_table(file_path, ["soc_pct", "value"], ())
    soc = table["soc_pct"]
    if soc.size < 2:
        raise ParsingError(f"{Path(file_path).name}: a curve needs at least 2 points")
    steps = np.diff(soc)
    if np.any(steps <= 0):
        row = int(np.argmax(steps <= 0)) + 1
        raise ParsingError(f"{Path(file_path).name}, line {data_lines[row]}: soc_pct must be strictly increasing")
    return soc, table["value"]


def load_fuel_samples(file_path: str) -> List[Tuple[float, float]]:
    """Load fuel-curve samples with columns ``p_kw,mdot_kg_per_s``.

    Args:
        file_path (str): Path to the fuel-curve CSV

    Returns:
        List[Tuple[float, float]]: (power kW, hydrogen flow kg/s) pairs
    """
    table = read_numeric_table(file_path, ["p_kw", "mdot_kg_per_s"])
    return list(zip(table["p_kw"].tolist(), table["mdot_kg_per_s"].tolist()))
