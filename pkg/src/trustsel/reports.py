"""Machine-readable run reports: atomic JSON plus a flat metrics CSV row per run."""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

METRICS_CSV_HEADER = (
    "run_id",
    "pairing",
    "lambda",
    "fraction",
    "er",
    "eo_disp",
    "dp_disp",
    "sa",
    "ra",
    "wall_ms",
)


def jsonable(obj):
    """Recursively convert numpy scalars/arrays so json.dumps accepts the object."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def write_json_atomic(path: str | Path, payload: dict) -> Path:
    """Write JSON via a temp file and rename, so readers never see partial content."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        json.dump(jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def metrics_csv_row(
    run_id: str,
    pairing: str,
    lam: float,
    fraction: float | None,
    metrics: dict,
    wall_ms: float,
) -> dict:
    def fmt(value):
        return "" if value is None else repr(float(value))

    return {
        "run_id": run_id,
        "pairing": pairing,
        "lambda": repr(float(lam)),
        "fraction": "" if fraction is None else repr(float(fraction)),
        "er": fmt(metrics.get("er")),
        "eo_disp": fmt(metrics.get("eo_disp")),
        "dp_disp": fmt(metrics.get("dp_disp")),
        "sa": fmt(metrics.get("sa")),
        "ra": fmt(metrics.get("ra")),
        "wall_ms": repr(float(wall_ms)),
    }


def append_metrics_row(out_dir: str | Path, row: dict) -> Path:
    """Append one row to metrics.csv, creating it with a header when absent.

    The header plus row are emitted in a single write call so concurrent runs
    do not interleave within a row.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "metrics.csv"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRICS_CSV_HEADER)
    new_file = not path.exists()
    if new_file:
        writer.writeheader()
    writer.writerow(row)
    with path.open("a", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    return path


def read_metrics_rows(out_dir: str | Path) -> list[dict]:
    path = Path(out_dir) / "metrics.csv"
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
