"""Deterministic CSV writing and reading for the package's streams."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return ""
    return format(x, ".17g")


def write_csv(path, header: list[str], columns: list) -> Path:
    """
    Write equal-length columns under `header`.

    Floats are written with 17 significant digits, so identical inputs give
    byte-identical files. NaN is written as an empty field.
    """
    path = Path(path)
    n = len(columns[0]) if columns else 0
    if any(len(c) != n for c in columns):
        raise ValueError("columns must have equal length")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([_fmt(v) for v in row])
    return path


def flatten_columns(name: str, arr, labels: list[str]) -> tuple[list[str], list]:
    """Split a ``(n, k)`` array into named columns ``name_label``."""
    arr = np.asarray(arr, dtype=float).reshape(len(arr), -1)
    return [f"{name}_{lab}" for lab in labels], [arr[:, i] for i in range(arr.shape[1])]


def read_csv(path) -> tuple[list[str], dict[str, np.ndarray]]:
    """Read a file written by :func:`write_csv` into float (or str) columns."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols: dict[str, np.ndarray] = {}
    for i, name in enumerate(header):
        raw = [r[i] for r in body]
        try:
            cols[name] = np.array([float(v) if v != "" else np.nan for v in raw])
        except ValueError:
            cols[name] = np.array(raw)
    return header, cols
