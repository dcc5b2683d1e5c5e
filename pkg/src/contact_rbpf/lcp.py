"""Mixed LCP solver for the contact time-stepping problem.

The velocity and joint impulses are eliminated (M is block diagonal), which
leaves a standard LCP  w = A z + b,  0 <= w  _|_  z >= 0  in

    z = [p_n, p_f, sigma],   w = [rho_n, rho_f, s].

Lemke's complementary pivoting solves it; projected Gauss-Seidel on the
(normal, net friction) impulses is the fallback.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .dynamics import LcpSystem

PIVOT_TOL = 1e-10
TOL_COMP = 1e-8
TOL_NEG = 1e-10


class SolveStatus(enum.Enum):
    SOLVED = "solved"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"


@dataclass
class LcpSolution:
    v_next: np.ndarray
    p_b: np.ndarray
    p_n: np.ndarray
    p_f: np.ndarray
    sigma: np.ndarray
    rho_n: np.ndarray
    rho_f: np.ndarray
    s: np.ndarray
    status: SolveStatus
    method: str = "lemke"
    iterations: int = 0

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.p_n, self.p_f, self.sigma])

    @property
    def w(self) -> np.ndarray:
        return np.concatenate([self.rho_n, self.rho_f, self.s])

    def complementarity_residual(self) -> float:
        if self.z.size == 0:
            return 0.0
        return float(np.max(np.abs(self.w * self.z)))

    def min_component(self) -> float:
        if self.z.size == 0:
            return 0.0
        return float(min(self.w.min(), self.z.min()))


@dataclass
class ReducedLcp:
    A: np.ndarray
    b: np.ndarray
    v0: np.ndarray
    N: np.ndarray
    joint_map: tuple


def reduce(sys: LcpSystem) -> ReducedLcp:
    """Eliminate v_{t+1} and the joint impulses from the mixed LCP."""
    nc = sys.n_contacts
    Minv = sys.M_inv
    v_free = sys.v + Minv @ sys.p_app
    if sys.G_b.shape[1]:
        Gb = sys.G_b
        S = Gb.T @ Minv @ Gb
        S_inv = np.linalg.inv(S)
        N = Minv - Minv @ Gb @ S_inv @ Gb.T @ Minv
        v0 = v_free - Minv @ Gb @ S_inv @ (Gb.T @ v_free + sys.b_b)
        joint_map = (S_inv, v_free)
    else:
        N = Minv
        v0 = v_free
        joint_map = ()
    Gn, Gf = sys.G_n, sys.G_f
    A = np.zeros((4 * nc, 4 * nc))
    J = np.hstack([Gn, Gf])
    A[:3 * nc, :3 * nc] = J.T @ N @ J
    A[nc:3 * nc, 3 * nc:] = sys.E
    A[3 * nc:, :nc] = sys.U
    A[3 * nc:, nc:3 * nc] = -sys.E.T
    b = np.concatenate([Gn.T @ v0 + sys.b_n, Gf.T @ v0 + sys.b_f, np.zeros(nc)])
    return ReducedLcp(A, b, v0, N, joint_map)


def lemke(A, b, max_iter=None, pivot_tol=PIVOT_TOL):
    """Lemke's method with covering vector of ones and a lexicographic ratio test.

    Returns (z, ok, iterations).
    """
    n = len(b)
    if n == 0 or np.all(b >= 0):
        return np.zeros(n), True, 0
    max_iter = max_iter or 50 * (n + 1)
    # columns: w (n), z (n), z0, rhs
    T = np.hstack([np.eye(n), -A, -np.ones((n, 1)), b[:, None]]).astype(float)
    basis = list(range(n))
    z0 = 2 * n

    # initial pivot; ties go to the largest index (lexicographic rule with B = I)
    bmin = b.min()
    r = max(i for i in range(n) if b[i] <= bmin + pivot_tol * max(1.0, abs(bmin)))
    entering = z0
    for it in range(1, max_iter + 1):
        T[r] /= T[r, entering]
        col = T[:, entering].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        leaving = basis[r]
        basis[r] = entering
        if leaving == z0:
            x = np.zeros(2 * n + 1)
            x[basis] = T[:, -1]
            return np.maximum(x[n:2 * n], 0.0), True, it
        entering = leaving + n if leaving < n else leaving - n
        d = T[:, entering]
        rows = np.flatnonzero(d > pivot_tol)
        if rows.size == 0:
            return None, False, it  # secondary ray
        r = _lex_min_ratio(T, d, rows, n)
    return None, False, max_iter


def _lex_min_ratio(T, d, rows, n):
    ratios = T[rows, -1] / d[rows]
    best = ratios.min()
    tie = rows[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
    col = 0
    while tie.size > 1 and col < n:
        vals = T[tie, col] / d[tie]
        m = vals.min()
        tie = tie[vals <= m + 1e-12]
        col += 1
    return int(tie[0])


def pgs(sys: LcpSystem, red: ReducedLcp, sweeps=500, relaxation=1.0, tol=TOL_COMP):
    """Projected Gauss-Seidel on normal and net tangential impulses.

    Returns z = [p_n, p_f, sigma] and whether the sweep converged.
    """
    nc = sys.n_contacts
    gt = sys.G_f[:, 0::2]
    J = np.hstack([sys.G_n, gt])
    W = J.T @ red.N @ J
    c = np.concatenate([sys.G_n.T @ red.v0 + sys.b_n, gt.T @ red.v0 + sys.b_f[0::2]])
    lam = np.zeros(2 * nc)
    mu = sys.mu
    converged = False
    for _ in range(sweeps):
        delta = 0.0
        for i in range(nc):
            for k, lo_hi in ((i, None), (nc + i, i)):
                if W[k, k] <= 0:
                    continue
                old = lam[k]
                new = old - relaxation * (W[k] @ lam + c[k]) / W[k, k]
                if lo_hi is None:
                    new = max(0.0, new)
                else:
                    lim = mu[lo_hi] * lam[lo_hi]
                    new = min(max(new, -lim), lim)
                lam[k] = new
                delta = max(delta, abs(new - old))
        if delta < tol:
            converged = True
            break
    p_n = lam[:nc]
    f = lam[nc:]
    p_f = np.zeros(2 * nc)
    p_f[0::2] = np.maximum(f, 0.0)
    p_f[1::2] = np.maximum(-f, 0.0)
    vt = gt.T @ (red.v0 + red.N @ (J @ lam)) + sys.b_f[0::2]
    sigma = np.abs(vt)
    return np.concatenate([p_n, p_f, sigma]), converged


def canonical_friction(p_f: np.ndarray) -> np.ndarray:
    """Remove the common part of each opposed friction pair (it cancels in G_f p_f)."""
    p = p_f.copy()
    m = np.minimum(p[0::2], p[1::2])
    p[0::2] -= m
    p[1::2] -= m
    return p


def _recover(sys: LcpSystem, red: ReducedLcp, z, status, method, iterations):
    nc = sys.n_contacts
    p_n = z[:nc]
    p_f = canonical_friction(z[nc:3 * nc])
    sigma = z[3 * nc:]
    contact_impulse = sys.G_n @ p_n + sys.G_f @ p_f
    v_next = red.v0 + red.N @ contact_impulse
    if red.joint_map:
        S_inv, v_free = red.joint_map
        Minv = sys.M_inv
        p_b = -S_inv @ (sys.G_b.T @ (v_free + Minv @ contact_impulse) + sys.b_b)
    else:
        p_b = np.zeros(0)
    rho_n = sys.G_n.T @ v_next + sys.b_n
    rho_f = sys.G_f.T @ v_next + sys.E @ sigma + sys.b_f
    s = sys.U @ p_n - sys.E.T @ p_f
    return LcpSolution(v_next=v_next, p_b=p_b, p_n=p_n, p_f=p_f, sigma=sigma, rho_n=rho_n,
                       rho_f=rho_f, s=s, status=status, method=method, iterations=iterations)


def newton_euler_residual(sys: LcpSystem, sol: LcpSolution) -> float:
    r = (-sys.M @ sol.v_next + sys.G_b @ sol.p_b + sys.G_n @ sol.p_n + sys.G_f @ sol.p_f
         + sys.momentum_term)
    return float(np.linalg.norm(r) / max(1.0, np.linalg.norm(sys.momentum_term)))


def solve(sys: LcpSystem, tol_comp: float = TOL_COMP, max_iter: int | None = None,
          pgs_sweeps: int = 500) -> LcpSolution:
    """Solve the step LCP. Lemke first, PGS if Lemke fails to terminate."""
    red = reduce(sys)
    z, ok, it = lemke(red.A, red.b, max_iter)
    if ok:
        sol = _recover(sys, red, z, SolveStatus.SOLVED, "lemke", it)
        if sol.complementarity_residual() <= tol_comp and sol.min_component() >= -TOL_NEG * max(1.0, np.abs(red.b).max(initial=0.0)):
            return sol
    z, converged = pgs(sys, red, sweeps=pgs_sweeps, tol=tol_comp)
    sol = _recover(sys, red, z, SolveStatus.MAX_ITERATIONS, "pgs", pgs_sweeps)
    nc = sys.n_contacts
    # the tangential rows are met by the minimal sigma; judge on normal rows and cone
    normal_ok = (sol.rho_n.min(initial=0.0) >= -1e-6
                 and np.max(np.abs(sol.rho_n * sol.p_n), initial=0.0) <= 1e-6)
    if not (converged and normal_ok) and nc:
        sol.status = SolveStatus.INFEASIBLE
    return sol
