"""Linear equality/inequality constraints on the filter state implied by a contact mode.

Two sets are produced per step: one on x_{t+1} (contact velocity rows and
position-level gap rows) and one on x_t (impulse feasibility, with the
impulses written as affine functions of x_t). Inequalities use A x >= b.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr

from .contact_model import IndexSets
from .dynamics import LcpSystem
from .transition import active_system, friction_columns, regularized_inverse

VACUOUS_TOL = 1e-12
RANK_RTOL = 1e-10


class Binds(enum.Enum):
    CURRENT = "current"    # x_{t+1}
    PREVIOUS = "previous"  # x_t


@dataclass
class ConstraintSet:
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    binds: Binds = Binds.CURRENT
    provenance: tuple = ()
    # "velocity" or "position" per row
    eq_kind: tuple = field(default=())
    ineq_kind: tuple = field(default=())

    @property
    def dim(self) -> int:
        return self.A_eq.shape[1]

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.A_ineq.shape[0]

    @property
    def empty(self) -> bool:
        return self.n_eq == 0 and self.n_ineq == 0

    def residuals(self, x):
        """(A_eq x - b_eq, A_ineq x - b_ineq)."""
        return self.A_eq @ x - self.b_eq, self.A_ineq @ x - self.b_ineq

    def only(self, kinds=("velocity", "position"), ineq_kinds=None) -> "ConstraintSet":
        """Sub-set with the rows of the given kinds (``ineq_kinds`` defaults to ``kinds``)."""
        ineq_kinds = kinds if ineq_kinds is None else ineq_kinds
        ke = [i for i, k in enumerate(self.eq_kind) if k in kinds]
        ki = [i for i, k in enumerate(self.ineq_kind) if k in ineq_kinds]
        return ConstraintSet(self.A_eq[ke], self.b_eq[ke], self.A_ineq[ki], self.b_ineq[ki],
                             self.binds, self.provenance, tuple(self.eq_kind[i] for i in ke),
                             tuple(self.ineq_kind[i] for i in ki))

    def pruned(self, rtol) -> "ConstraintSet":
        """Copy with the equality rows re-pruned at relative rank tolerance ``rtol``."""
        A, b, kinds = prune_redundant(self.A_eq, self.b_eq, self.eq_kind, rtol)
        return ConstraintSet(A, b, self.A_ineq, self.b_ineq, self.binds, self.provenance, tuple(kinds),
                             self.ineq_kind)

    def extended(self, A_eq, b_eq, A_in, b_in, kind="position") -> "ConstraintSet":
        return finalize(np.vstack([self.A_eq, A_eq]), np.concatenate([self.b_eq, b_eq]),
                        np.vstack([self.A_ineq, A_in]), np.concatenate([self.b_ineq, b_in]),
                        self.binds, self.provenance,
                        tuple(self.eq_kind) + (kind,) * A_eq.shape[0],
                        tuple(self.ineq_kind) + (kind,) * A_in.shape[0])


def empty_set(dim, binds=Binds.CURRENT) -> ConstraintSet:
    return ConstraintSet(np.zeros((0, dim)), np.zeros(0), np.zeros((0, dim)), np.zeros(0), binds)


def _normalize(A, b, kinds=None, tol=VACUOUS_TOL):
    """Drop rows with a vanishing coefficient vector, scale the rest to unit inf-norm."""
    if A.shape[0] == 0:
        return A, b, () if kinds is None else tuple(kinds)
    s = np.abs(A).max(axis=1)
    keep = s >= tol
    A = A[keep] / s[keep, None]
    b = b[keep] / s[keep]
    if kinds is not None:
        kinds = tuple(k for k, m in zip(kinds, keep) if m)
    return A, b, kinds


def prune_redundant(A, b, kinds=None, rtol=RANK_RTOL):
    """Keep a maximal independent subset of equality rows (QR with column pivoting on A^T).

    Rows are considered in order of pivoting, so earlier rows are not
    preferred; the kept rows stay in their original order.
    """
    if A.shape[0] <= 1:
        return A, b, kinds
    if A.shape[0] <= A.shape[1]:
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[-1] > rtol * sv[0]:
            return A, b, kinds
    _, R, piv = qr(A.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > rtol * d[0])) if d.size and d[0] > 0 else 0
    keep = np.sort(piv[:rank])
    if kinds is not None:
        kinds = tuple(kinds[i] for i in keep)
    return A[keep], b[keep], kinds


def finalize(A_eq, b_eq, A_in, b_in, binds, provenance=(), eq_kinds=None, ineq_kinds=None) -> ConstraintSet:
    eq_kinds = eq_kinds if eq_kinds is not None else ("velocity",) * A_eq.shape[0]
    ineq_kinds = ineq_kinds if ineq_kinds is not None else ("velocity",) * A_in.shape[0]
    A_eq, b_eq, eq_kinds = _normalize(A_eq, b_eq, eq_kinds)
    A_eq, b_eq, eq_kinds = prune_redundant(A_eq, b_eq, eq_kinds)
    A_in, b_in, ineq_kinds = _normalize(A_in, b_in, ineq_kinds)
    return ConstraintSet(A_eq, b_eq, A_in, b_in, binds, provenance, tuple(eq_kinds), tuple(ineq_kinds))


def position_rows(G_n, psi, q_lin, n_dof):
    """Rows g^T q over x = [q; v] with g^T q (=, >=) g^T q_lin - psi, from gaps psi at q_lin."""
    A = np.hstack([G_n.T, np.zeros((G_n.shape[1], n_dof))])
    return A, G_n.T @ q_lin - psi


@dataclass
class ImpulseExpression:
    """[p_n; p_f; sigma]_{t+1} = L x_t + c for a fixed contact mode.

    When the contact set is statically indeterminate the impulses are only
    fixed up to the rows of ``null`` (directions in z-space that leave the
    motion unchanged); L, c then give the minimum-norm member.
    """

    L: np.ndarray
    c: np.ndarray
    n_contacts: int
    null: np.ndarray = None
    regularized: bool = False

    def evaluate(self, x) -> np.ndarray:
        return self.L @ x + self.c

    def split(self, x):
        z = self.evaluate(x)
        nc = self.n_contacts
        return z[:nc], z[nc:3 * nc], z[3 * nc:]


NULL_RTOL = 1e-9


def impulse_expression(sys: LcpSystem, idx: IndexSets, x_lin=None, trans=None) -> ImpulseExpression:
    """Affine impulses of x_t = [q; v] under the mode ``idx``.

    A sticking contact has a signed net friction; it is written into the
    p+ or p- slot according to its sign at ``x_lin`` (default: the state in
    ``sys``), so p+ - p- always equals the net friction. ``trans`` may be the
    already derived transition of the same mode.
    """
    nd = sys.n_dof
    nc = sys.n_contacts
    cols, net = friction_columns(idx)
    if trans is None:
        J, K, d, (nb, nn, nf, ns) = active_system(sys, idx)
        K_inv, reg = regularized_inverse(K)
        H = np.hstack([J, np.zeros((nd, ns))])
        F = np.vstack([J.T * sys.m_inv, np.zeros((ns, nd))])
    else:
        K, K_inv, reg, H, F = trans.K, trans.K_inv, trans.regularized, trans.H, trans.F
        nb, nn, nf, ns = trans.blocks
        d = trans.u[nd:]
    # lam = -K^-1 (F (M v + p_app) + d) = Lv v + c
    Lv = -K_inv @ H.T
    c_lam = -K_inv @ (F @ sys.p_app + d)
    L_lam = np.hstack([np.zeros((Lv.shape[0], nd)), Lv])
    if reg:
        _, sv, Vt = np.linalg.svd(K)
        null_lam = Vt[sv <= NULL_RTOL * sv[0]]
    else:
        null_lam = np.zeros((0, K.shape[0]))
    if x_lin is None:
        x_lin = np.concatenate([sys.q, sys.v])

    # scatter matrix S (4nc x dim lam) with z = S lam
    S = np.zeros((4 * nc, K.shape[0]))
    off = nb
    for k, i in enumerate(idx.alpha_n):
        S[i, off + k] = 1.0
    off += nn
    for k, (col, is_net) in enumerate(zip(cols, net)):
        if is_net and L_lam[off + k] @ x_lin + c_lam[off + k] < 0.0:
            S[nc + col + 1, off + k] = -1.0
        else:
            S[nc + col, off + k] = 1.0
    off += nf
    for k, i in enumerate(idx.alpha_s):
        S[3 * nc + i, off + k] = 1.0
    return ImpulseExpression(S @ L_lam, S @ c_lam, nc, null_lam @ S.T, reg)


def build_current(sys: LcpSystem, idx: IndexSets, expr: ImpulseExpression, x_lin,
                  position_rows: bool = True, provenance=()) -> ConstraintSet:
    """Constraints on x_{t+1} = [q; v] for the mode ``idx``.

    Velocity rows: enforced normal/friction rows are equalities, the rest of
    the normal rows and the idle friction row of sliding contacts are
    inequalities. ``sigma`` is evaluated from ``expr`` at ``x_lin`` (the
    belief mean of x_t). Position rows: the first-order gap
    g_n^T (q_{t+1} - q_t) + psi + h * rate is zero for enforced contacts and
    nonnegative for the others, with q_t taken from ``x_lin``.
    """
    nd = sys.n_dof
    nc = sys.n_contacts
    h = sys.h
    Z = np.zeros((0, 2 * nd))
    if nc == 0 and sys.G_b.shape[1] == 0:
        return empty_set(2 * nd, Binds.CURRENT)
    sigma = expr.split(x_lin)[2] if nc else np.zeros(0)
    q_lin = x_lin[:nd]
    Gn, Gf = sys.G_n, sys.G_f
    zeros_q = lambda m: np.zeros((m, nd))

    eq_A = [np.hstack([zeros_q(sys.G_b.shape[1]), sys.G_b.T])]
    n_pos_eq = 0
    eq_b = [-sys.b_b]
    an = idx.alpha_n
    eq_A.append(np.hstack([zeros_q(an.size), Gn[:, an].T]))
    eq_b.append(-sys.b_n[an])
    af = idx.alpha_f
    eq_A.append(np.hstack([zeros_q(af.size), Gf[:, af].T]))
    eq_b.append(-sys.b_f[af] - (sys.E @ sigma)[af] if nc else np.zeros(0))
    in_A, in_b, kinds = [], [], []
    bn = idx.beta_n
    in_A.append(np.hstack([zeros_q(bn.size), Gn[:, bn].T]))
    in_b.append(-sys.b_n[bn])
    kinds += ["velocity"] * bn.size
    # idle friction row of each sliding contact: g^T v + sigma + b_f >= 0
    idle = np.array([r for r in idx.beta_f if r // 2 in set(idx.alpha_s.tolist())], dtype=int)
    in_A.append(np.hstack([zeros_q(idle.size), Gf[:, idle].T]))
    in_b.append(-sys.b_f[idle] - (sys.E @ sigma)[idle] if idle.size else np.zeros(0))
    kinds += ["velocity"] * idle.size
    if position_rows:
        target = Gn.T @ q_lin - h * sys.b_n
        eq_A.append(np.hstack([Gn[:, an].T, np.zeros((an.size, nd))]))
        eq_b.append(target[an])
        n_pos_eq = an.size
        in_A.append(np.hstack([Gn[:, bn].T, np.zeros((bn.size, nd))]))
        in_b.append(target[bn])
        kinds += ["position"] * bn.size
    A_eq = np.vstack(eq_A + [Z])
    eq_kinds = ("velocity",) * (A_eq.shape[0] - n_pos_eq) + ("position",) * n_pos_eq
    return finalize(A_eq, np.concatenate(eq_b), np.vstack(in_A + [Z]),
                    np.concatenate(in_b), Binds.CURRENT, provenance, eq_kinds, tuple(kinds))


def build_previous(sys: LcpSystem, idx: IndexSets, expr: ImpulseExpression,
                   provenance=()) -> ConstraintSet:
    """Constraints on x_t from impulse feasibility of the mode ``idx``.

    Equalities: cone saturation of sliding contacts and zero impulses on
    excluded rows. Both hold identically for the affine impulses and are
    dropped as vacuous, but they are still formed so the set is complete.
    Inequalities: p_n >= 0 and p_f >= 0 on enforced rows, sigma >= 0 for
    sliding contacts, and |p+ - p-| <= mu p_n for sticking contacts.

    For indeterminate contact sets only rows that do not depend on the
    undetermined impulse directions are kept, together with the summed
    normal and cone rows of each body pair.
    """
    nd = sys.n_dof
    nc = sys.n_contacts
    dim = 2 * nd
    if nc == 0:
        return empty_set(dim, Binds.PREVIOUS)
    mu = sys.mu

    def e(*pairs):
        a = np.zeros(4 * nc)
        for j, w in pairs:
            a[j] += w
        return a

    pn = lambda i: i
    pf = lambda r: nc + r
    sg = lambda i: 3 * nc + i
    eq = [e((pn(i), mu[i]), (pf(2 * i), -1.0), (pf(2 * i + 1), -1.0)) for i in idx.alpha_s]
    eq += [e((pn(i), 1.0)) for i in idx.beta_n]
    eq += [e((pf(r), 1.0)) for r in idx.beta_f]
    sticking = [i for i in idx.alpha_n if i not in set(idx.alpha_s.tolist())]
    ineq = [e((pn(i), 1.0)) for i in idx.alpha_n]
    ineq += [e((pf(r), 1.0)) for r in idx.alpha_f if r // 2 not in sticking]
    ineq += [e((sg(i), 1.0)) for i in idx.alpha_s]
    for i in sticking:
        for sgn in (1.0, -1.0):
            ineq.append(e((pn(i), mu[i]), (pf(2 * i), -sgn), (pf(2 * i + 1), sgn)))
    if expr.regularized:
        groups = {}
        for i in idx.alpha_n:
            c = sys.contacts[i]
            groups.setdefault((c.body_a, c.body_b), []).append(i)
        for members in groups.values():
            if len(members) < 2:
                continue
            ineq.append(e(*[(pn(i), 1.0) for i in members]))
            for sgn in (1.0, -1.0):
                terms = []
                for i in members:
                    terms += [(pn(i), mu[i]), (pf(2 * i), -sgn), (pf(2 * i + 1), sgn)]
                ineq.append(e(*terms))
        null = expr.null
        ineq = [a for a in ineq
                if np.abs(null @ a).max(initial=0.0) <= NULL_RTOL * max(1.0, np.abs(a).max())]

    def compose(rows):
        if not rows:
            return np.zeros((0, dim)), np.zeros(0)
        Acoef = np.array(rows)
        return Acoef @ expr.L, -(Acoef @ expr.c)

    A_eq, b_eq = compose(eq)
    A_in, b_in = compose(ineq)
    scale = max(1.0, np.abs(expr.L).max(initial=0.0))
    A_eq, b_eq = _drop_vacuous(A_eq, b_eq, scale)
    A_in, b_in = _drop_vacuous(A_in, b_in, scale)
    return finalize(A_eq, b_eq, A_in, b_in, Binds.PREVIOUS, provenance)


def _drop_vacuous(A, b, scale):
    # rows that vanish up to roundoff of the impulse map
    if A.shape[0] == 0:
        return A, b
    keep = np.abs(A).max(axis=1) >= VACUOUS_TOL * scale
    return A[keep], b[keep]
