"""CSV / JSON output helpers.

CSV: ',' separator, '.' decimal, LF line endings, floats with 17 significant
digits.  JSON documents carry ``schema_version = "1"``; non-finite floats are
written as strings so the output stays strict JSON.
"""
from __future__ import annotations

import io
import json
import math
from typing import Any, Iterable, Sequence

import numpy as np

SCHEMA_VERSION = "1"


def fmt(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def to_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(fmt(x) for x in row) + "\n")
    return buf.getvalue()


def sanitize(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def to_json(obj: dict) -> str:
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(sanitize(obj))
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def atoms_csv(distributions) -> str:
    rows = []
    for d in distributions:
        for v, p in d.rows():
            rows.append((d.quantity, d.condition, d.depth, d.mode, v, p))
    return to_csv(("quantity", "condition", "depth", "mode", "value", "prob"), rows)


def read_atoms_csv(text: str) -> list[dict]:
    lines = text.strip().split("\n")
    header = lines[0].split(",")
    out = []
    for line in lines[1:]:
        rec = dict(zip(header, line.split(",")))
        rec["value"] = float(rec["value"])
        rec["prob"] = float(rec["prob"])
        rec["depth"] = int(rec["depth"])
        out.append(rec)
    return out


def decay_csv(trace) -> str:
    return to_csv(("depth", "xbar", "xbar1", "xbar0", "stderr"), trace.rows())


def bound_trace_csv(trace) -> str:
    return to_csv(("depth", "xbar_measured", "xbar_bound"), trace.rows())
