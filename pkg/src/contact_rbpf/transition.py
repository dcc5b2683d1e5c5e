"""Contact-mode-conditioned linear transition v_{t+1} = A v_t + B u_t.

With the mode fixed, the enforced complementarity rows become equalities and
the unknowns lam = [p_b; p_n[an]; p_f[af]; sigma[as]] solve K lam = -(F (M v + p_app) + d).
Joints are always enforced. The filter state is lifted to x = [q; v] with
q_{t+1} = q_t + h v_{t+1}.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contact_model import IndexSets
from .dynamics import LcpSystem

SINGULAR_RTOL = 1e-12
RIDGE = 1e-10


@dataclass
class LinearTransition:
    A: np.ndarray
    B: np.ndarray
    u: np.ndarray
    K: np.ndarray
    H: np.ndarray
    F: np.ndarray
    K_inv: np.ndarray
    regularized: bool
    h: float
    # layout of lam: sizes of the (joint, normal, friction, sigma) blocks
    blocks: tuple = (0, 0, 0, 0)

    @property
    def n_dof(self) -> int:
        return self.A.shape[0]

    @property
    def Bu(self) -> np.ndarray:
        return self.B @ self.u

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.A @ v + self.Bu

    def lift(self):
        """Transition over x = [q; v]: returns (T, b) with x' = T x + b."""
        n = self.n_dof
        T = np.zeros((2 * n, 2 * n))
        T[:n, :n] = np.eye(n)
        T[:n, n:] = self.h * self.A
        T[n:, n:] = self.A
        bu = self.Bu
        return T, np.concatenate([self.h * bu, bu])


def lift_noise(Q_v: np.ndarray, h: float) -> np.ndarray:
    """Velocity-block process noise carried into the pose rows by q' = q + h v'."""
    n = Q_v.shape[0]
    Q = np.zeros((2 * n, 2 * n))
    Q[:n, :n] = h * h * Q_v
    Q[:n, n:] = h * Q_v
    Q[n:, :n] = h * Q_v
    Q[n:, n:] = Q_v
    return Q


def regularized_inverse(K: np.ndarray):
    """K^-1, or a Tikhonov-regularized inverse when K is numerically singular.

    The regularized inverse is (K^T K + eps^2 I)^-1 K^T with
    eps = 1e-10 ||K||_inf, evaluated through the SVD. Returns (inverse, regularized).
    """
    if K.size == 0:
        return K.copy(), False
    inv, reg = regularized_inverse_batch(K[None])
    return inv[0], bool(reg[0])


def regularized_inverse_batch(K: np.ndarray):
    """``regularized_inverse`` over a stack K (G, m, m); returns (inverses, flags)."""
    if K.shape[1] == 0:
        return K.copy(), np.zeros(K.shape[0], dtype=bool)
    U, s, Vt = np.linalg.svd(K)
    reg = s[:, -1] <= SINGULAR_RTOL * s[:, 0]
    filt = 1.0 / np.where(s > 0, s, 1.0)
    if reg.any():
        eps = RIDGE * np.abs(K).sum(axis=2).max(axis=1)
        tik = s / (s * s + (eps * eps)[:, None])
        filt = np.where(reg[:, None], tik, filt)
    return (np.swapaxes(Vt, 1, 2) * filt[:, None, :]) @ np.swapaxes(U, 1, 2), reg


def friction_columns(idx: IndexSets):
    """Friction columns carried in lam and which of them are signed net impulses.

    A sticking contact enforces both opposed rows, which are negatives of
    each other, and its two columns are negatives too; only the net impulse
    p+ - p- is determined, so the pair is carried as one signed column.
    """
    af = idx.alpha_f
    cols, net = [], []
    in_af = set(af.tolist())
    for r in af:
        if r % 2 == 0 and r + 1 in in_af:
            cols.append(r)
            net.append(True)
        elif r % 2 == 1 and r - 1 in in_af:
            continue
        else:
            cols.append(r)
            net.append(False)
    return np.array(cols, dtype=int), np.array(net, dtype=bool)


def active_system(sys: LcpSystem, idx: IndexSets):
    """Jacobian J of the enforced rows, coupling matrix K and constant d."""
    J, K, d, blocks = active_system_batch([sys], idx)
    return J[0], K[0], d[0], blocks


def active_system_batch(systems, idx: IndexSets):
    """``active_system`` for systems sharing the candidate layout; stacked outputs."""
    an, as_ = idx.alpha_n, idx.alpha_s
    af, _ = friction_columns(idx)
    nc = systems[0].n_contacts
    if an.size and an.max() >= nc or af.size and af.max() >= 2 * nc:
        raise ValueError("index sets do not match the contact system")
    nb = systems[0].G_b.shape[1]
    parts = [np.stack([s.G_n[:, an] for s in systems]), np.stack([s.G_f[:, af] for s in systems])]
    if nb:
        parts.insert(0, np.stack([s.G_b for s in systems]))
    J = np.concatenate(parts, axis=2)
    G, nd, m1 = J.shape
    ns = as_.size
    m_inv = np.stack([s.m_inv for s in systems])
    K = np.zeros((G, m1 + ns, m1 + ns))
    K[:, :m1, :m1] = np.swapaxes(J, 1, 2) @ (J * m_inv[:, :, None])
    off_f = nb + an.size
    # E has E[r, r // 2] = 1 and U = diag(mu)
    Eaf = (af[:, None] // 2 == as_[None, :]).astype(float)
    K[:, off_f:m1, m1:] = Eaf
    sel = (as_[:, None] == an[None, :]).astype(float)
    K[:, m1:, nb:off_f] = sel * np.stack([s.mu[as_] for s in systems])[:, :, None]
    K[:, m1:, off_f:m1] = -Eaf.T
    d = np.zeros((G, m1 + ns))
    for g, s in enumerate(systems):
        d[g, :nb] = s.b_b
        d[g, nb:off_f] = s.b_n[an]
        d[g, off_f:m1] = s.b_f[af]
    return J, K, d, (nb, an.size, af.size, ns)


def derive_transition(sys: LcpSystem, idx: IndexSets) -> LinearTransition:
    return derive_transitions([sys], idx)[0]


def derive_transitions(systems, idx: IndexSets) -> list:
    """Transitions of several systems sharing the candidate layout, under one mode."""
    J, K, d, blocks = active_system_batch(systems, idx)
    G, nd, m1 = J.shape
    ns = blocks[3]
    m_inv = np.stack([s.m_inv for s in systems])[:, :, None]
    H = np.zeros((G, nd, m1 + ns))
    H[:, :, :m1] = J
    F = np.zeros((G, m1 + ns, nd))
    F[:, :m1] = np.swapaxes(J * m_inv, 1, 2)
    K_inv, reg = regularized_inverse_batch(K)
    HKi = J @ K_inv[:, :m1]
    M = np.stack([s.M for s in systems])
    A = m_inv * (M - HKi[:, :, :m1] @ np.swapaxes(J, 1, 2))
    B = np.empty((G, nd, nd + m1 + ns))
    B[:, :, :nd] = m_inv * (np.eye(nd) - HKi @ F)
    B[:, :, nd:] = -m_inv * HKi
    return [LinearTransition(A=A[g], B=B[g], u=np.concatenate([s.p_app, d[g]]), K=K[g], H=H[g],
                             F=F[g], K_inv=K_inv[g], regularized=bool(reg[g]), h=s.h, blocks=blocks)
            for g, s in enumerate(systems)]
