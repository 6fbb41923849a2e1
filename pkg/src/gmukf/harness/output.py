"""Trace CSVs and the JSON summary of a run.

Files are a pure function of the run: no timestamps, sorted JSON keys and
17 significant digits for every float, so repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from .simulate import GMTrace, RunResult

FLOAT_FORMAT = "{:.17g}"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FORMAT.format(float(v))


def trace_columns(result: RunResult) -> List[str]:
    n, m = result.config.model.n, result.config.model.m
    cols = ["step", "t"]
    cols += [f"x_true_{j}" for j in range(n)]
    cols += [f"z_{i}" for i in range(m)]
    names = result.filter_names
    if "ukf" in names:
        cols += [f"ukf_x_{j}" for j in range(n)]
    if "gmukf" in names:
        cols += [f"gmukf_x_{j}" for j in range(n)]
        cols += [f"gmukf_ps_{i}" for i in range(m + n)]
        cols += [f"gmukf_w_{i}" for i in range(m + n)]
        cols.append("gmukf_iters")
    return cols


def trace_rows(result: RunResult, index: int):
    rep = result.replicates[index]
    dt = result.config.dt
    ukf = rep.filters.get("ukf")
    gm = rep.filters.get("gmukf")
    for k in range(rep.truth.shape[0]):
        row = [k + 1, (k + 1) * dt, *rep.truth[k], *rep.measurements[k]]
        if ukf is not None:
            row += list(ukf.x[k])
        if isinstance(gm, GMTrace):
            row += list(gm.x[k]) + list(gm.ps[k]) + list(gm.weights[k]) + [gm.iterations[k]]
        yield row


def _clean(value):
    """JSON-safe copy: arrays to lists, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        f = float(value)
        return f if math.isfinite(f) else None
    return value


def summarize(result: RunResult) -> Dict[str, Any]:
    filters = {}
    for name in result.filter_names:
        failures = [{"replicate": r.index, "step": r.filters[name].failed_step,
                     "error": r.filters[name].error}
                    for r in result.replicates if r.filters[name].failed_step is not None]
        filters[name] = {
            "rmse": result.rmse(name),
            "replicate_rmse": result.replicate_rmse(name),
            "completed": len(result.completed(name)),
            "failures": failures,
        }
    summary = {
        "config": result.config.raw,
        "replicates": len(result.replicates),
        "filters": filters,
    }
    if "gmukf" in result.filter_names:
        summary["irls"] = result.irls_stats()
        summary["detection"] = result.detection()
    if "ukf" in result.filter_names and "gmukf" in result.filter_names:
        summary["rmse_ratio"] = result.rmse("gmukf") / result.rmse("ukf")
    return _clean(summary)


def write_outputs(result: RunResult, out_dir=None) -> List[Path]:
    """Write ``replicate_NNNN.csv`` per replicate (if traces are on) and ``summary.json``.

    Raises
    ------
    OSError
        The directory or a file cannot be written; the message names the path.
    """
    cfg = result.config
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    width = max(4, len(str(len(result.replicates) - 1)))
    if cfg.traces:
        header = trace_columns(result)
        for i in range(len(result.replicates)):
            path = out / f"replicate_{i:0{width}d}.csv"
            try:
                with path.open("w", newline="") as fh:
                    writer = csv.writer(fh, lineterminator="\n")
                    writer.writerow(header)
                    for row in trace_rows(result, i):
                        writer.writerow([_fmt(v) for v in row])
            except OSError as exc:
                raise OSError(f"cannot write {path}: {exc}") from exc
            written.append(path)
    path = out / "summary.json"
    try:
        path.write_text(json.dumps(summarize(result), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    written.append(path)
    return written


def read_trace(path) -> Dict[str, np.ndarray]:
    """Load a trace CSV back into one float array per column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    return {name: data[:, j] for j, name in enumerate(header)}
