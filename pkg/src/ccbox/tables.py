"""CSV writers and readers for the command-line outputs.

Floats are written with ``repr`` (the shortest string that round-trips to
the same double), booleans as ``0``/``1``.  Column orders are fixed by the
writers in :mod:`ccbox.cli`; the reader returns one array per column.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
            w.writerow([format_value(v) for v in row])
    return path


def _parse(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_table(path) -> dict:
    """Column name -> numpy array (float/int where every entry parses, else str)."""
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        cols = [[] for _ in header]
        for row in r:
            for c, v in zip(cols, row):
                c.append(_parse(v))
    out = {}
    for name, values in zip(header, cols):
        if all(isinstance(v, int) for v in values):
            out[name] = np.array(values, dtype=int)
        elif all(isinstance(v, (int, float)) for v in values):
            out[name] = np.array(values, dtype=float)
        else:
            out[name] = np.array([str(v) for v in values], dtype=object)
    return out


def floats_equal(a, b) -> bool:
    """Elementwise equality that treats matching NaNs as equal."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return a.shape == b.shape and bool(np.all((a == b) | (np.isnan(a) & np.isnan(b))))

