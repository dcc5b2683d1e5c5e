"""SVG trajectory plots, one file per (pose, velocity) DOF pair."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import dof_names, induced_velocity  # noqa: E402

STYLE = {"truth": dict(color="black", lw=1.2), "measurement": dict(color="0.6", lw=0.6),
         "induced": dict(color="0.6", lw=0.6), "unconstrained": dict(color="tab:blue", lw=1.0),
         "constrained": dict(color="tab:red", lw=1.0)}


def _setup():
    # fixed ids and no timestamp so repeated runs give identical files
    matplotlib.rcParams["svg.hashsalt"] = "contact-rbpf"
    matplotlib.rcParams["svg.fonttype"] = "none"


def plot_runs(truth, runs: dict, out_dir, prefix="") -> list:
    """Write the pose and velocity panels for every DOF; returns the paths."""
    _setup()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nd = truth.q.shape[1]
    names = dof_names(truth.tracked)
    steps = np.arange(truth.n_steps + 1)
    ind = induced_velocity(truth)
    paths = []
    for i in range(nd):
        fig, (ax_q, ax_v) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
        ax_q.plot(steps, truth.z[:, i], label="measurement", **STYLE["measurement"])
        ax_q.plot(steps, truth.q[:, i], label="truth", **STYLE["truth"])
        ax_v.plot(steps, ind[:, i], label="induced", **STYLE["induced"])
        ax_v.plot(steps, truth.v[:, i], label="truth", **STYLE["truth"])
        for name, run in runs.items():
            st = STYLE.get(name, {})
            ax_q.plot(steps, run.mean[:, i], label=name, **st)
            ax_v.plot(steps, run.mean[:, nd + i], label=name, **st)
        ax_q.set_ylabel(names[i])
        ax_v.set_ylabel(names[nd + i])
        ax_v.set_xlabel("step")
        # keep the velocity panel readable when the induced series is very noisy
        core = np.concatenate([truth.v[:, i]] + [r.mean[:, nd + i] for r in runs.values()])
        lo, hi = np.nanmin(core), np.nanmax(core)
        pad = 0.5 * max(hi - lo, 1e-3)
        ax_v.set_ylim(lo - pad, hi + pad)
        ax_q.legend(loc="best", fontsize=7)
        ax_v.legend(loc="best", fontsize=7)
        fig.tight_layout()
        path = out_dir / f"{prefix}{names[i]}_{names[nd + i]}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths
