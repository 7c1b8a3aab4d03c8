"""Reading and writing numeric CSV files with row-level error reporting."""
from __future__ import annotations

import csv
import io
import math
import os

import numpy as np

from .errors import ConfigError


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_numeric_csv(path, n_cols: int | None = None, allow_empty: bool = False) -> np.ndarray:
    """Load a rectangular numeric CSV into a float array of shape (rows, cols).

    A first row with no numeric field is treated as a header.  Blank lines
    and lines starting with ``#`` are skipped.

    Raises
    ------
    ConfigError
        Missing file, ragged rows, non-numeric or non-finite entries; the
        message names the file and the 1-based line number.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ConfigError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data, width = [], n_cols
    header_seen = False
    for lineno, row in enumerate(rows, start=1):
        fields = [f.strip() for f in row]
        if not fields or all(f == "" for f in fields) or fields[0].startswith("#"):
            continue
        if not data and not header_seen and not any(_is_number(f) for f in fields):
            header_seen = True
            continue
        if width is None:
            width = len(fields)
        if len(fields) != width:
            raise ConfigError(f"{path}, line {lineno}: expected {width} fields, got {len(fields)}")
        vals = []
        for j, f in enumerate(fields, start=1):
            try:
                v = float(f)
            except ValueError:
                raise ConfigError(f"{path}, line {lineno}, column {j}: "
                                  f"non-numeric value {f!r}") from None
            if not math.isfinite(v):
                raise ConfigError(f"{path}, line {lineno}, column {j}: non-finite value {f!r}")
            vals.append(v)
        data.append(vals)
    if not data and not allow_empty:
        raise ConfigError(f"{path}: no data rows")
    return np.asarray(data, dtype=float).reshape(len(data), width or 0)


LAYOUTS = {"column-major": "F", "row-major": "C"}


def matrices_from_rows(rows, d: int, p: int, layout: str = "column-major") -> np.ndarray:
    """Reshape rows of ``d*p`` values into an (n, d, p) stack.

    ``layout`` says how each matrix was flattened: ``"column-major"`` (first
    column, then second, ...) or ``"row-major"``.
    """
    rows = np.asarray(rows, dtype=float)
    if layout not in LAYOUTS:
        raise ConfigError(f"unknown matrix layout {layout!r}")
    if rows.shape[1] != d * p:
        raise ConfigError(f"each row must hold d*p = {d * p} values, got {rows.shape[1]}")
    if layout == "row-major":
        return rows.reshape(-1, d, p)
    return rows.reshape(-1, p, d).transpose(0, 2, 1)


def matrices_to_rows(X, layout: str = "column-major") -> np.ndarray:
    """Inverse of :func:`matrices_from_rows`."""
    X = np.asarray(X, dtype=float)
    if layout not in LAYOUTS:
        raise ConfigError(f"unknown matrix layout {layout!r}")
    if layout == "row-major":
        return X.reshape(len(X), -1)
    return X.transpose(0, 2, 1).reshape(len(X), -1)


def matrix_header(d: int, p: int, layout: str = "column-major") -> list:
    if layout == "row-major":
        return [f"X[{i + 1},{k + 1}]" for i in range(d) for k in range(p)]
    return [f"X[{i + 1},{k + 1}]" for k in range(p) for i in range(d)]


def write_numeric_csv(path, array, header=None) -> str:
    """Write a 2-D array as CSV with ``repr`` floats (exact round trip); returns the text."""
    arr = np.asarray(array, dtype=float)
    arr = arr.reshape(len(arr), -1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(header)
    for row in arr:
        w.writerow([repr(float(v)) for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
