"""Ground-truth trajectories and noisy pose measurements."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..contacts import detect_contacts
from ..dynamics import SolverFailure, step_world
from ..rbpf import StepInput
from .scenarios import Scenario

CONTACT_TOL = 1e-9
TOUCH_TOL = 1e-4


class TruthFailure(RuntimeError):
    def __init__(self, step, msg):
        super().__init__(f"step {step}: {msg}")
        self.step = step


@dataclass
class Truth:
    """States 0..n_steps of the tracked bodies, measurements, and step inputs."""

    q: np.ndarray          # (n+1, 3 nb)
    v: np.ndarray          # (n+1, 3 nb)
    z: np.ndarray          # (n+1, 3 nb)
    inputs: list           # StepInput for steps 0..n-1
    contact_keys: list     # per state k: contacts touching at k or loaded in step k-1 -> k
    tracked: list
    h: float

    @property
    def n_steps(self) -> int:
        return self.q.shape[0] - 1

    def first_contact(self, body_b=None):
        """First state index reached through a contact impulse (optionally against body_b)."""
        for k, keys in enumerate(self.contact_keys):
            if any(body_b is None or body_b in key[:2] for key in keys):
                return k
        return None

    def contact_onsets(self):
        """(step, key) for every contact key that becomes loaded, in time order."""
        seen, out = set(), []
        for k, keys in enumerate(self.contact_keys):
            for key in sorted(keys):
                if key not in seen:
                    seen.add(key)
                    out.append((k, key))
        return out


def measurement_rng(seed):
    return np.random.default_rng([seed, 7])


def generate_truth(sc: Scenario, seed: int = 0) -> Truth:
    bodies = sc.bodies_at(0, sc.bodies)
    tracked = sc.tracked
    qs, vs, inputs, keys = [], [], [], [set()]

    def grab(bs):
        dyn = {b.id: b for b in bs if not b.is_static}
        return (np.concatenate([dyn[i].pose for i in tracked]),
                np.concatenate([dyn[i].velocity for i in tracked]))

    q, v = grab(bodies)
    qs.append(q)
    vs.append(v)
    for k in range(sc.n_steps):
        bodies = sc.bodies_at(k, bodies)
        inputs.append(StepInput(bodies, dict(sc.forces), sc.h, sc.gravity))
        try:
            nxt, sol = step_world(bodies, sc.forces, sc.h, margin=sc.margin, gravity=sc.gravity)
        except (SolverFailure, np.linalg.LinAlgError) as exc:
            raise TruthFailure(k, str(exc)) from exc
        cands = detect_contacts(bodies, sc.margin, validate=False)
        loaded = {c.key for c, pn in zip(cands, sol.p_n) if pn > CONTACT_TOL}
        bodies = nxt
        touching = {c.key for c in detect_contacts(bodies, TOUCH_TOL, validate=False)}
        keys.append(loaded | touching)
        q, v = grab(bodies)
        qs.append(q)
        vs.append(v)
    q = np.array(qs)
    R = sc.R_diag()
    z = q + measurement_rng(seed).normal(size=q.shape) * np.sqrt(R)
    return Truth(q, np.array(vs), z, inputs, keys, tracked, sc.h)
