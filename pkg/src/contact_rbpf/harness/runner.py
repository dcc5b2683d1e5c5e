"""Run the filters over a generated truth record."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..dynamics import SolverFailure
from ..rbpf import (FilterConfig, Mode, ParticleFailure, crbpf_step, direction_uncertainty, estimate, initial_particles,
                    rbpf_step)
from .scenarios import Scenario
from .truth import Truth

log = logging.getLogger(__name__)


class FilterFailure(RuntimeError):
    def __init__(self, step, msg, particle=None):
        where = f"step {step}" if particle is None else f"step {step}, particle {particle}"
        super().__init__(f"{where}: {msg}")
        self.step = step
        self.particle = particle


@dataclass
class FilterRun:
    mode: str
    seed: int
    mean: np.ndarray        # (n+1, 2 nd)
    cov_diag: np.ndarray    # (n+1, 2 nd)
    min_gap: np.ndarray     # (n+1,) smallest particle-mean gap to static bodies (inf if none near)
    modes: list             # per step: Counter of contact-state label strings
    flags: Counter = field(default_factory=Counter)
    sigma_d: np.ndarray = None   # (n+1, 2): weighted variance along (x, y) directions of body 0


def filter_config(sc: Scenario, mode, seed, n_particles=None) -> FilterConfig:
    return FilterConfig(n_particles=n_particles or sc.n_particles, Q_process=sc.Q_diag(),
                        R_meas=sc.R_diag(), resample_threshold=sc.resample_threshold, mode=mode,
                        W_choice=sc.W, seed=seed, likelihood=sc.likelihood, margin=sc.margin)


def initial_belief(sc: Scenario, truth: Truth):
    nd = truth.q.shape[1]
    mean = np.concatenate([truth.z[0], np.zeros(nd)])
    var = np.concatenate([np.tile([sc.init_sigma_pos ** 2] * 2 + [sc.sigma_theta ** 2], nd // 3),
                          np.full(nd, sc.init_sigma_v ** 2)])
    return mean, np.diag(var)


def _label_key(state) -> str:
    return ",".join(l.value for l in state.labels) or "none"


def run_filter(sc: Scenario, truth: Truth, mode, seed: int = 0, n_particles=None) -> FilterRun:
    mode = Mode(mode)
    cfg = filter_config(sc, mode, seed, n_particles)
    mean0, cov0 = initial_belief(sc, truth)
    particles = initial_particles(mean0, cov0, cfg.n_particles)
    step_fn = crbpf_step if mode is Mode.CONSTRAINED else rbpf_step
    n = truth.n_steps
    dim = mean0.shape[0]
    means = np.zeros((n + 1, dim))
    covs = np.zeros((n + 1, dim))
    gaps = np.full(n + 1, np.inf)
    sig = np.zeros((n + 1, 2))
    modes = [Counter({"none": cfg.n_particles})]
    flags = Counter()
    means[0], c = estimate(particles)
    covs[0] = np.diag(c)
    sig[0] = _sigma_d(particles, dim)
    for k in range(n):
        try:
            particles = step_fn(particles, truth.inputs[k], truth.z[k + 1], cfg, step=k)
        except ParticleFailure as exc:
            raise FilterFailure(k, str(exc.__cause__ or exc), exc.particle) from exc
        except (SolverFailure, np.linalg.LinAlgError) as exc:
            raise FilterFailure(k, str(exc)) from exc
        m, c = estimate(particles)
        means[k + 1] = m
        covs[k + 1] = np.diag(c)
        sig[k + 1] = _sigma_d(particles, dim)
        gaps[k + 1] = min(p.flags.get("min_gap", np.inf) for p in particles)
        modes.append(Counter(_label_key(p.contact_state) for p in particles))
        for p in particles:
            for key, v in p.flags.items():
                if key != "min_gap":
                    flags[key] += v
    return FilterRun(mode.value, seed, means, covs, gaps, modes, flags, sig)


def _sigma_d(particles, dim):
    nd = dim // 2
    out = []
    for d in (np.eye(nd)[0], np.eye(nd)[1]):
        out.append(direction_uncertainty(particles, d))
    return np.array(out)
