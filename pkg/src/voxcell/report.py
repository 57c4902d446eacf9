"""JSON and CSV reports with a reproducibility manifest."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import platform
from importlib import resources
from pathlib import Path

import numpy as np

TIMING_KEYS = ("seconds", "setup_seconds")


def versions() -> dict:
    import scipy

    from . import __version__

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "voxcell": __version__}


def _plain(obj):
    """JSON-ready copy: numpy to Python, NaN/inf to None, tuples to lists."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _split_timings(obj, prefix="", out=None):
    """Remove wall-clock entries from ``obj`` and collect them by JSON path."""
    out = {} if out is None else out
    if isinstance(obj, dict):
        for k in list(obj):
            path = f"{prefix}.{k}" if prefix else k
            if k in TIMING_KEYS:
                out[path] = obj.pop(k)
            else:
                _split_timings(obj[k], path, out)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _split_timings(v, f"{prefix}[{i}]", out)
    return out


def build_report(kind: str, results: dict, command: str = "", config: dict | None = None,
                 timings: dict | None = None) -> dict:
    """Assemble the report document.

    Everything that changes between identical runs (the UTC time and every
    wall-clock duration) lives under ``timestamp``; the rest is deterministic.
    """
    from . import __version__

    body = _plain(results)
    config = _plain(config or {})
    found = _split_timings(body)
    found.update(_plain(timings or {}))
    return {
        "kind": kind,
        "voxcell_version": __version__,
        "manifest": {"command": command, "config": config, "versions": versions()},
        "results": body,
        "timestamp": {
            "utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "timings_s": dict(sorted(found.items())),
        },
    }


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(dumps(report), encoding="utf-8")
    return path


def load_schema() -> dict:
    text = resources.files("voxcell").joinpath("schemas/report.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_report(report: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if the report breaks the shipped schema."""
    import jsonschema

    jsonschema.validate(report, load_schema())


CSV_COLUMNS = ("phi", "E_star_MPa", "dofs", "p", "voxels_per_cell", "solver_iters")


def write_csv(rows, path, extra: tuple[str, ...] = ()) -> Path:
    """Table with the fixed leading columns, then any ``extra`` ones."""
    path = Path(path)
    cols = list(CSV_COLUMNS) + [c for c in extra if c not in CSV_COLUMNS]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in cols})
    return path
