"""JSON reports and CSV plot series."""

from __future__ import annotations

import csv
import io
import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__

SERIES = ("remainder", "sweep", "modulus")


def clean(obj):
    """Convert numpy values to plain JSON types; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def build_report(command: str, config: dict, results: dict, timings: dict | None) -> dict:
    out = {
        "tool": "magnify",
        "version": __version__,
        "command": command,
        "config": clean(config),
        "results": clean(results),
    }
    if timings is not None:
        out["timings"] = clean(timings)
    return out


def dumps(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def load_schema() -> dict:
    text = resources.files("magnify").joinpath("report.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _find(report: dict, key: str):
    stack = [report.get("results", {})]
    while stack:
        node = stack.pop(0)
        if isinstance(node, dict):
            if key in node and node[key] is not None:
                return node[key]
            stack.extend(v for v in node.values() if isinstance(v, dict))
    return None


def series_rows(report: dict, series: str) -> tuple[list[str], list[list]]:
    if not series:
        raise ValueError("empty series selector")
    if series not in SERIES:
        raise ValueError(f"unknown series {series!r}; choose from {', '.join(SERIES)}")
    if series == "remainder":
        rem = _find(report, "remainder")
        if rem is None or "series" not in rem:
            raise ValueError("report has no remainder series")
        rows = [[s, r] for s, r in rem["series"]]
        header = ["scale", "value"]
    elif series == "modulus":
        mod = _find(report, "modulus")
        if not mod:
            raise ValueError("report has no modulus table")
        rows = [[r[0], r[1]] for r in mod]
        header = ["scale", "value"]
    else:
        sw = _find(report, "sweep")
        if sw is None:
            raise ValueError("report has no sweep transcript")
        rows = [
            [t["scale"], t["value"] if t["value"] is not None else float(t["passed"]), int(t["passed"])]
            for t in sw["transcript"]
        ]
        header = ["scale", "value", "passed"]
    rows.sort(key=lambda r: r[0])
    return header, rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def emit_csv(report: dict, series: str, path=None) -> str:
    """CSV of one series in ascending scale, 17 significant digits."""
    header, rows = series_rows(report, series)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
