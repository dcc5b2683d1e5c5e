"""CSV and JSON outputs.

Truth CSV columns (one row per step and tracked body):
    step, t, body, x, y, theta, vx, vy, omega, z_x, z_y, z_theta, contacts
where ``contacts`` lists the touching/loaded contact keys as
``a-b-vertex-edge`` separated by ``;``.

Run CSV columns (one row per step and tracked body):
    step, t, body, x, y, theta, vx, vy, omega,
    var_x, var_y, var_theta, var_vx, var_vy, var_omega, min_gap, modes
where ``modes`` is the particle count per contact-mode label string, as
``label:count`` separated by ``;``.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

TRUTH_HEADER = ["step", "t", "body", "x", "y", "theta", "vx", "vy", "omega", "z_x", "z_y", "z_theta",
                "contacts"]
RUN_HEADER = ["step", "t", "body", "x", "y", "theta", "vx", "vy", "omega", "var_x", "var_y", "var_theta",
              "var_vx", "var_vy", "var_omega", "min_gap", "modes"]


def fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.10g}"


def _open(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="", encoding="utf-8")


def write_truth_csv(truth, path) -> None:
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for k in range(truth.n_steps + 1):
            keys = ";".join("-".join(str(i) for i in key) for key in sorted(truth.contact_keys[k]))
            for j, body in enumerate(truth.tracked):
                s = slice(3 * j, 3 * j + 3)
                w.writerow([k, fmt(k * truth.h), body]
                           + [fmt(x) for x in truth.q[k, s]] + [fmt(x) for x in truth.v[k, s]]
                           + [fmt(x) for x in truth.z[k, s]] + [keys])


def write_run_csv(run, truth, path) -> None:
    nd = truth.q.shape[1]
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_HEADER)
        for k in range(run.mean.shape[0]):
            modes = ";".join(f"{m}:{c}" for m, c in sorted(run.modes[k].items()))
            for j, body in enumerate(truth.tracked):
                q = slice(3 * j, 3 * j + 3)
                v = slice(nd + 3 * j, nd + 3 * j + 3)
                w.writerow([k, fmt(k * truth.h), body]
                           + [fmt(x) for x in run.mean[k, q]] + [fmt(x) for x in run.mean[k, v]]
                           + [fmt(x) for x in run.cov_diag[k, q]] + [fmt(x) for x in run.cov_diag[k, v]]
                           + [fmt(run.min_gap[k]), modes])


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else fmt(x)
    return obj


def write_json(obj, path) -> None:
    with _open(path) as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
