"""Tabular result files: a versioned metadata header followed by CSV rows.

Floats are written with 17 significant digits so files round-trip exactly
and diff cleanly. Nothing time-dependent goes into the header.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import astuple, is_dataclass
from fractions import Fraction

import numpy as np

from .. import __version__
from ..errors import ValidationError

TABLE_VERSION = 1
MAGIC = "# reggelab table v"


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def parse_value(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    if "/" in text:
        try:
            return Fraction(text)
        except ValueError:
            return text
    try:
        return float(text)
    except ValueError:
        return text


def dumps_table(columns, rows, meta: dict | None = None) -> str:
    """Render rows (sequences or dataclasses) under the given header."""
    buf = io.StringIO()
    buf.write(f"{MAGIC}{TABLE_VERSION}\n")
    head = {"reggelab": __version__}
    head.update(meta or {})
    for key in sorted(head):
        buf.write(f"# {key}: {json.dumps(head[key], sort_keys=True, default=_json_default)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(columns))
    for r in rows:
        vals = astuple(r) if is_dataclass(r) else tuple(r)
        if len(vals) != len(columns):
            raise ValidationError(f"row has {len(vals)} values for {len(columns)} columns")
        w.writerow([format_value(v) for v in vals])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if isinstance(o, Fraction):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def loads_table(text: str):
    """Parse a table back into (meta, columns, rows)."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith(MAGIC):
        raise ValidationError("not a reggelab table")
    version = int(lines[0][len(MAGIC):])
    if version != TABLE_VERSION:
        raise ValidationError(f"unsupported table version {version}")
    meta = {}
    k = 1
    while k < len(lines) and lines[k].startswith("# "):
        key, _, val = lines[k][2:].partition(": ")
        meta[key] = json.loads(val)
        k += 1
    reader = csv.reader(lines[k:])
    columns = next(reader)
    rows = [[parse_value(c) for c in r] for r in reader]
    return meta, columns, rows


def write_table(path, columns, rows, meta=None) -> str:
    text = dumps_table(columns, rows, meta)
    with open(path, "w") as fh:
        fh.write(text)
    return text


def read_table(path):
    with open(path) as fh:
        return loads_table(fh.read())
