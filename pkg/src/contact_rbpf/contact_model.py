"""Discrete contact modes, their index sets, and per-particle mode sampling."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

V_STICK_BAND = 1e-3
HYSTERESIS = 0.2
LABEL_TOL = 1e-9


class ContactLabel(enum.Enum):
    SEPARATED = "separated"
    STICKING = "sticking"
    # positive slip along the contact tangent; friction acts on the -tangent column
    SLIDING_POS = "sliding_pos"
    SLIDING_NEG = "sliding_neg"

    @property
    def active(self) -> bool:
        return self is not ContactLabel.SEPARATED


@dataclass(frozen=True)
class ContactState:
    """One label per candidate, in candidate order; ``keys`` are feature identities."""

    labels: tuple
    keys: tuple = ()

    def __len__(self):
        return len(self.labels)

    def active_keys(self) -> frozenset:
        return frozenset(k for k, l in zip(self.keys, self.labels) if l.active)

    def n_active(self) -> int:
        return sum(l.active for l in self.labels)

    @classmethod
    def separated(cls, candidates=()) -> "ContactState":
        return cls(tuple(ContactLabel.SEPARATED for _ in candidates),
                   tuple(c.key for c in candidates))


@dataclass(frozen=True)
class IndexSets:
    alpha_n: np.ndarray
    beta_n: np.ndarray
    alpha_f: np.ndarray
    beta_f: np.ndarray
    alpha_s: np.ndarray
    beta_s: np.ndarray

    @property
    def empty(self) -> bool:
        return self.alpha_n.size == 0 and self.alpha_f.size == 0 and self.alpha_s.size == 0


def index_sets(c: ContactState) -> IndexSets:
    an, bn, af, bf, as_, bs = [], [], [], [], [], []
    for i, lab in enumerate(c.labels):
        if lab is ContactLabel.SEPARATED:
            bn.append(i)
            bf += [2 * i, 2 * i + 1]
            bs.append(i)
        elif lab is ContactLabel.STICKING:
            an.append(i)
            af += [2 * i, 2 * i + 1]
            bs.append(i)
        else:
            an.append(i)
            on = 2 * i + 1 if lab is ContactLabel.SLIDING_POS else 2 * i
            af.append(on)
            bf.append(4 * i + 1 - on)
            as_.append(i)
    arr = lambda x: np.array(sorted(x), dtype=int)
    return IndexSets(arr(an), arr(bn), arr(af), arr(bf), arr(as_), arr(bs))


def labels_from_solution(sys, sol, tol: float = LABEL_TOL) -> ContactState:
    """Read the realized contact modes off an LCP solution."""
    labels = []
    scale = max(1.0, float(np.max(np.abs(sol.p_n), initial=0.0)))
    for i in range(sys.n_contacts):
        if sol.p_n[i] <= tol * scale:
            labels.append(ContactLabel.SEPARATED)
            continue
        vt = sys.G_f[:, 2 * i] @ sol.v_next + sys.b_f[2 * i]
        if sol.sigma[i] > tol and abs(vt) > tol:
            labels.append(ContactLabel.SLIDING_POS if vt > 0 else ContactLabel.SLIDING_NEG)
        else:
            labels.append(ContactLabel.STICKING)
    return ContactState(tuple(labels), tuple(c.key for c in sys.contacts))


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def activation_probability(g_hat: float, sigma_g: float) -> float:
    if sigma_g <= 0.0:
        return 1.0 if g_hat <= 0.0 else 0.0
    return normal_cdf(-g_hat / sigma_g)


def stick_probability(vt_hat: float, sigma_v: float, band: float = V_STICK_BAND) -> float:
    if sigma_v <= 0.0:
        return 1.0 if abs(vt_hat) <= band else 0.0
    return normal_cdf((band - abs(vt_hat)) / sigma_v)


def contact_predictions(sys, mean, cov):
    """Predicted next-step gap, tangential velocity and their standard deviations.

    ``mean``/``cov`` are over x = [q; v] with the dof layout of ``sys``.
    """
    nd = sys.n_dof
    h = sys.h
    v = mean[nd:]
    v_free = v + sys.m_inv * sys.p_app
    Gn = sys.G_n
    gt = sys.G_f[:, 0::2]
    g_hat = h * (Gn.T @ v_free + sys.b_n)
    # next gap ~ psi + h g_n^T v  ->  gradient [g; h g] on [q; v] to first order
    Jg = np.vstack([Gn, h * Gn])
    var_g = ((Jg.T @ cov) * Jg.T).sum(axis=1)
    Pvv = cov[nd:, nd:]
    vt_hat = gt.T @ v + sys.b_f[0::2]
    var_v = ((gt.T @ Pvv) * gt.T).sum(axis=1)
    return g_hat, np.sqrt(np.maximum(var_g, 0.0)), vt_hat, np.sqrt(np.maximum(var_v, 0.0))


def sample_contact_state(mean, cov, c_prev: ContactState, sys, rng,
                         band: float = V_STICK_BAND, hysteresis: float = HYSTERESIS,
                         predictions=None, uniforms=None) -> ContactState:
    """Sample a contact mode for every candidate of ``sys``.

    Three uniforms are drawn per candidate whatever the outcome, so the
    stream position does not depend on earlier decisions. ``predictions``
    may hold a precomputed ``contact_predictions(sys, mean, cov)``, and
    ``uniforms`` pre-drawn (nc, 3) uniforms to use instead of ``rng``.
    """
    nc = sys.n_contacts
    if nc == 0:
        return ContactState((), ())
    if predictions is None:
        predictions = contact_predictions(sys, mean, cov)
    g_hat, s_g, vt_hat, s_v = predictions
    prev = c_prev.active_keys() if c_prev is not None else frozenset()
    u = rng.random((nc, 3)) if uniforms is None else uniforms[:nc]
    labels = []
    for i, c in enumerate(sys.contacts):
        p = activation_probability(g_hat[i], s_g[i])
        if c.key in prev:
            p += hysteresis * (1.0 - p)
        if u[i, 0] >= p:
            labels.append(ContactLabel.SEPARATED)
        elif u[i, 1] < stick_probability(vt_hat[i], s_v[i], band):
            labels.append(ContactLabel.STICKING)
        else:
            p_pos = normal_cdf(vt_hat[i] / s_v[i]) if s_v[i] > 0 else float(vt_hat[i] > 0)
            labels.append(ContactLabel.SLIDING_POS if u[i, 2] < p_pos else ContactLabel.SLIDING_NEG)
    return ContactState(tuple(labels), tuple(c.key for c in sys.contacts))
