"""Deterministic CSV output."""

from __future__ import annotations

import csv
import math
import os
from numbers import Integral


def format_value(v) -> str:
    """Render one cell; floats use the shortest round-trip representation."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "pass" if v else "fail"
    if isinstance(v, Integral):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_from_log(log_x) -> str:
    """Decimal rendering of ``exp(log_x)`` even when it is not a double."""
    if log_x is None or math.isnan(log_x):
        return "nan"
    if log_x == -math.inf:
        return "0.0"
    if log_x == math.inf:
        return "inf"
    if -700.0 < log_x < 700.0:
        # 15 digits hide the last-bit noise of the log round trip
        return repr(float(f"{math.exp(log_x):.15g}"))
    l10 = log_x / math.log(10.0)
    e = math.floor(l10)
    mant = 10.0 ** (l10 - e)
    if mant >= 9.9999995:
        mant, e = 1.0, e + 1
    return f"{mant:.7g}e{e:+d}"


def emit_report(rows, schema, path):
    """Write ``rows`` under the header ``schema`` as UTF-8 CSV.

    Rows must have one cell per column. The file uses ``\\n`` line endings
    and a trailing newline; identical rows give byte-identical files.
    """
    schema = tuple(schema)
    rendered = []
    for i, row in enumerate(rows):
        row = tuple(row)
        if len(row) != len(schema):
            raise ValueError(f"row {i} has {len(row)} cells, schema has {len(schema)}")
        rendered.append([format_value(v) for v in row])
    d = os.path.dirname(os.fspath(path))
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema)
        w.writerows(rendered)
    return path
