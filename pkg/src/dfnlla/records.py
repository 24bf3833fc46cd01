"""On-disk formats: trace CSVs, result JSON sidecars, key=value config files."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .benchmark import RunTrace, TraceRecord, fmt

TRACE_COLUMNS = ["k", "variant", "success", "alpha", "alpha_tilde", "zeta", "P", "F",
                 "lower_evals_cum", "upper_evals_cum", "kkt_res", "upper_violation"]


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def trace_csv(result, m: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS + [f"rho_{i + 1}" for i in range(m)])
    for r in result.trace:
        rho = [fmt(v) for v in r.rho] if r.rho is not None else [""] * m
        w.writerow([r.k, r.variant, fmt(r.success), fmt(r.alpha), fmt(r.alpha_tilde), fmt(r.zeta),
                    fmt(r.P), fmt(r.F), r.lower_evals_cum, r.upper_evals_cum, fmt(r.kkt_res),
                    fmt(r.upper_violation), *rho])
    return buf.getvalue()


def read_trace_rows(path) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        return [TraceRecord(int(row["lower_evals_cum"]), float(row["F"]),
                            float(row["upper_violation"]), float(row["kkt_res"]))
                for row in csv.DictReader(fh)]


def result_dict(result, problem, trace_file: str) -> dict:
    c = result.counters
    return {
        "problem": result.problem,
        "solver": result.variant.value,
        "zeta_bar": result.zeta_bar,
        "n_x": problem.n_x,
        "n_y": problem.n_y,
        "m": problem.m,
        "trace": trace_file,
        "x_best": list(map(float, result.x_best)),
        "y_best": list(map(float, result.y_best)),
        "P_best": result.P_best,
        "F_best": result.F_best,
        "kkt_best": result.kkt_best,
        "violation_best": result.violation_best,
        "stop_reason": result.stop_reason,
        "error": result.error,
        "iterations": len(result.history),
        "upper_evals": c.upper_evals,
        "lower_obj_evals": c.lower_obj_evals,
        "lower_solver_calls": c.lower_solver_calls,
        "rho_updates": [list(e) for e in result.rho_log],
    }


def dumps17(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps17(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(dumps17(v, indent, _level + 1) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return json.dumps(obj if not isinstance(obj, np.bool_) else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    v = float(obj)
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return "%.17g" % v


def load_traces(directory, zeta_bar: float | None = None) -> list[RunTrace]:
    """Read every ``*.json`` result sidecar in ``directory`` with its trace CSV."""
    directory = Path(directory)
    traces = []
    for meta_path in sorted(directory.glob("*.json")):
        meta = json.loads(meta_path.read_text())
        if not {"problem", "solver", "zeta_bar", "trace"} <= meta.keys():
            continue
        if zeta_bar is not None and not math.isclose(meta["zeta_bar"], zeta_bar, rel_tol=1e-12):
            continue
        rows = read_trace_rows(directory / meta["trace"])
        traces.append(RunTrace(meta["problem"], meta["solver"], float(meta["zeta_bar"]),
                               int(meta["n_x"]), int(meta["n_y"]), rows).check())
    return traces


def parse_config(text: str) -> dict[str, str]:
    """Line-oriented ``key=value`` pairs; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {n}: empty key")
        out[key] = value
    return out
