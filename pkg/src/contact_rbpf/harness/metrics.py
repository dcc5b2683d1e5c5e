"""Error metrics of filter runs against the ground truth."""
from __future__ import annotations

import numpy as np

from .runner import FilterRun
from .truth import Truth

POSE_NAMES = ("x", "y", "theta")
VEL_NAMES = ("vx", "vy", "omega")
PENETRATION_TOL = 1e-6


def dof_names(tracked) -> list:
    if len(tracked) == 1:
        return list(POSE_NAMES + VEL_NAMES)
    pose = [f"{n}_{b}" for b in tracked for n in POSE_NAMES]
    vel = [f"{n}_{b}" for b in tracked for n in VEL_NAMES]
    return pose + vel


def rmse(est, ref, axis=0):
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape[axis] == 0:
        return np.full(est.shape[1 - axis] if est.ndim == 2 else (), np.nan)
    return np.sqrt(np.mean((est - ref) ** 2, axis=axis))


def induced_velocity(truth: Truth) -> np.ndarray:
    """Finite differences of consecutive measurements; row k is (z_k - z_{k-1}) / h, row 0 is nan."""
    v = np.full_like(truth.z, np.nan)
    v[1:] = np.diff(truth.z, axis=0) / truth.h
    return v


def default_windows(truth: Truth, windows=None) -> dict:
    """Step windows [start, stop) over states 1..n.

    Without explicit windows the run is split at the first contact into
    ``pre_contact`` and ``post_contact``; ``all`` is always present.
    """
    n = truth.n_steps
    out = {"all": (1, n + 1)}
    if windows:
        out.update({k: (max(1, int(a)), min(n + 1, int(b))) for k, (a, b) in windows.items()})
        return out
    c = truth.first_contact()
    if c is not None:
        out["pre_contact"] = (1, max(1, c))
        out["post_contact"] = (c, n + 1)
    return out


def window_metrics(run: FilterRun, truth: Truth, a: int, b: int) -> dict:
    nd = truth.q.shape[1]
    names = dof_names(truth.tracked)
    ref = np.hstack([truth.q, truth.v])[a:b]
    err = run.mean[a:b] - ref
    r = rmse(run.mean[a:b], ref)
    gaps = run.min_gap[a:b]
    pen = gaps < -PENETRATION_TOL
    return {
        "steps": [a, b],
        "rmse": dict(zip(names, r.tolist())),
        "max_abs_error": dict(zip(names, np.abs(err).max(axis=0).tolist() if b > a else [np.nan] * 2 * nd)),
        "velocity_rmse": float(np.mean(r[nd:])),
        "penetration_steps": int(pen.sum()),
        "max_penetration": float(max(0.0, -gaps.min())) if gaps.size else 0.0,
    }


def induced_metrics(truth: Truth, a: int, b: int) -> dict:
    """RMSE of the finite-difference velocity, the baseline the filters are compared with."""
    names = dof_names(truth.tracked)[truth.q.shape[1]:]
    r = rmse(induced_velocity(truth)[a:b], truth.v[a:b])
    return {"rmse": dict(zip(names, r.tolist())), "velocity_rmse": float(np.mean(r))}


def run_metrics(run: FilterRun, truth: Truth, windows: dict) -> dict:
    return {name: window_metrics(run, truth, a, b) for name, (a, b) in windows.items()}


def summarize(runs: dict, truth: Truth, windows=None) -> dict:
    """Metrics of several runs (name -> FilterRun) plus the induced-velocity baseline."""
    win = default_windows(truth, windows)
    out = {"windows": {k: list(v) for k, v in win.items()},
           "induced_velocity": {k: induced_metrics(truth, a, b) for k, (a, b) in win.items()}}
    for name, run in runs.items():
        out[name] = run_metrics(run, truth, win)
        out[name]["flags"] = dict(sorted(run.flags.items()))
    return out
