"""Result files: ``results.csv``, ``run.json`` and ``pn_trace_<point>.csv``."""
from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig
from .sweep import RESULT_COLUMNS, PnTrace, ResultRow, ResultTable

RESULTS_FILE = "results.csv"
RUN_FILE = "run.json"
TRACE_COLUMNS = ("n", "theta_true", "theta_cpe", "theta_bem")

_TYPES = {f.name: f.type for f in fields(ResultRow)}


class ResultIOError(OSError):
    pass


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value).lower()
    return str(value)


def _parse(name: str, text: str):
    kind = _TYPES[name]
    if kind == "str":
        return text
    if kind == "int":
        return int(text)
    return float(text)


def _open(path: Path, mode: str):
    try:
        return open(path, mode, newline="")
    except OSError as exc:
        raise ResultIOError(f"{path}: {exc.strerror}") from None


def write_table(table: ResultTable, path) -> Path:
    path = Path(path)
    with _open(path, "w") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(RESULT_COLUMNS)
        for row in table:
            w.writerow([_fmt(getattr(row, c)) for c in RESULT_COLUMNS])
    return path


def read_results(path) -> ResultTable:
    """Parse a ``results.csv`` (or a directory holding one) back into a table."""
    path = Path(path)
    if path.is_dir():
        path = path / RESULTS_FILE
    with _open(path, "r") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ResultIOError(f"{path}: unexpected header {reader.fieldnames}")
        rows = [ResultRow(**{k: _parse(k, v) for k, v in rec.items()}) for rec in reader]
    return ResultTable(rows)


def run_metadata(cfg: RunConfig, extra: dict | None = None) -> dict:
    meta = {
        "config": cfg.to_dict(),
        "base_seed": cfg.seed,
        "seeding": "numpy SeedSequence([base_seed, point_index, trial_index])",
        "versions": {
            "pnbem": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    if extra:
        meta.update(extra)
    return meta


def write_results(table: ResultTable, out_dir, cfg: RunConfig, extra: dict | None = None
                  ) -> dict[str, Path]:
    """Write ``results.csv`` and ``run.json`` into ``out_dir`` (created if needed)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ResultIOError(f"{out}: {exc.strerror}") from None
    csv_path = write_table(table, out / RESULTS_FILE)
    json_path = out / RUN_FILE
    with _open(json_path, "w") as fh:
        json.dump(run_metadata(cfg, extra), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"results": csv_path, "run": json_path}


def write_trace(trace: PnTrace, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"pn_trace_{trace.point}.csv"
    with _open(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(TRACE_COLUMNS)
        for row in zip(trace.n, trace.theta_true, trace.theta_cpe, trace.theta_bem):
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
    return path


def read_trace(path) -> dict[str, np.ndarray]:
    with _open(Path(path), "r") as fh:
        reader = csv.DictReader(fh)
        cols = {c: [] for c in TRACE_COLUMNS}
        for rec in reader:
            for c in TRACE_COLUMNS:
                cols[c].append(float(rec[c]))
    return {c: np.asarray(v, dtype=int if c == "n" else float) for c, v in cols.items()}
