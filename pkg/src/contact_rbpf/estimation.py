"""Kalman predict/correct and constrained updates of a Gaussian belief.

Constrained updates solve  min (x - x0)^T W (x - x0)  s.t.  A_eq x = b_eq,
A_in x >= b_in. Everything is written in terms of S = W^-1, so W = P^-1 is
used without inverting P. The covariance is reduced by the equality rows
only.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSet
from .transition import LinearTransition, lift_noise

KKT_TOL = 1e-8
MAX_CHANGES = 100
PRIOR_RIDGE = 1e-9
COND_LIMIT = 1e14


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = symmetrize(np.asarray(self.cov, dtype=float))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def copy(self) -> "GaussianBelief":
        return GaussianBelief(self.mean.copy(), self.cov.copy())


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"
    RANK_DEFICIENT = "rank_deficient"


@dataclass
class ProjectionResult:
    belief: GaussianBelief
    active_set: tuple = ()
    gamma: np.ndarray = None
    iterations: int = 0
    status: QpStatus = QpStatus.OPTIMAL
    multipliers: np.ndarray = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def symmetrize(P):
    return 0.5 * (P + P.T)


class Weighting(enum.Enum):
    IDENTITY = "identity"
    PRIOR_INVERSE = "prior_inverse"


def weight_inverse(P, choice=Weighting.IDENTITY, ridge=PRIOR_RIDGE):
    """S = W^-1 for the chosen projection metric (W = I or W = (P + ridge I)^-1)."""
    if Weighting(choice) is Weighting.IDENTITY:
        return np.eye(P.shape[0])
    return P + ridge * np.eye(P.shape[0])


# -- Kalman ------------------------------------------------------------------

def kalman_predict(belief: GaussianBelief, trans, Q) -> GaussianBelief:
    """Propagate through the lifted [q; v] transition.

    ``trans`` is a LinearTransition or a (T, b) pair. ``Q`` is either the
    velocity-block noise (lifted here) or a full-state covariance.
    """
    if isinstance(trans, LinearTransition):
        T, b = trans.lift()
        h = trans.h
    else:
        T, b = trans
        h = None
    n = belief.dim
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[0] != n:
        if h is None or 2 * Q.shape[0] != n:
            raise ValueError("process noise has the wrong dimension")
        Q = lift_noise(Q, h)
    if T.shape != (n, n):
        raise ValueError("transition does not match the belief dimension")
    return GaussianBelief(T @ belief.mean + b, T @ belief.cov @ T.T + Q)


def _check_pd(R):
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise ValueError("measurement covariance must be positive definite") from exc


def innovation(belief: GaussianBelief, z, H, R):
    r = np.asarray(z, dtype=float) - H @ belief.mean
    S = H @ belief.cov @ H.T + R
    return r, symmetrize(S)


def kalman_correct(belief: GaussianBelief, z, H, R, return_loglik=False, check=True):
    """Linear-Gaussian measurement update with the Joseph-form covariance.

    With ``return_loglik`` also returns log N(z; H x, H P H^T + R) of the
    prior, sharing the innovation factorization.
    """
    if check:
        _check_pd(R)
    r, S = innovation(belief, z, H, R)
    L = np.linalg.cholesky(S)
    PHt = belief.cov @ H.T
    K = np.linalg.solve(S, PHt.T).T
    I_KH = np.eye(belief.dim) - K @ H
    P = I_KH @ belief.cov @ I_KH.T + K @ R @ K.T
    post = GaussianBelief(belief.mean + K @ r, P)
    if not return_loglik:
        return post
    y = np.linalg.solve(L, r)
    ll = float(-0.5 * (y @ y) - np.log(np.diag(L)).sum() - 0.5 * len(r) * math.log(2 * math.pi))
    return post, ll


def kalman_batch(X, P, T, b, Q, z, H, R):
    """Predict and correct a stack of beliefs against one measurement.

    X (J, n) and P (J, n, n) are the beliefs, T (J, n, n) and b (J, n) their
    transitions and Q the full-state process noise. Returns the corrected
    means and covariances and log N(z; H x^-, H P^- H^T + R) per belief.
    """
    m = np.einsum("jab,jb->ja", T, X) + b
    Pp = T @ P @ np.swapaxes(T, 1, 2) + Q
    r = np.asarray(z, dtype=float) - m @ H.T
    PHt = Pp @ H.T
    S = H @ PHt + R
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    L = np.linalg.cholesky(S)
    K = np.swapaxes(np.linalg.solve(S, np.swapaxes(PHt, 1, 2)), 1, 2)
    I_KH = np.eye(X.shape[1]) - K @ H
    Pc = I_KH @ Pp @ np.swapaxes(I_KH, 1, 2) + K @ R @ np.swapaxes(K, 1, 2)
    Pc = 0.5 * (Pc + np.swapaxes(Pc, 1, 2))
    mc = m + np.einsum("jab,jb->ja", K, r)
    y = np.linalg.solve(L, r[:, :, None])[:, :, 0]
    logdet = np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    ll = -0.5 * (y * y).sum(axis=1) - logdet - 0.5 * r.shape[1] * math.log(2 * math.pi)
    return mc, Pc, ll


def gaussian_logpdf(r, S) -> float:
    L = np.linalg.cholesky(S)
    y = np.linalg.solve(L, r)
    return float(-0.5 * (y @ y) - np.log(np.diag(L)).sum() - 0.5 * len(r) * math.log(2 * math.pi))


def measurement_loglik(belief: GaussianBelief, z, H, R) -> float:
    """log N(z; H x, H P H^T + R)."""
    r, S = innovation(belief, z, H, R)
    return gaussian_logpdf(r, S)


def residual_loglik(belief: GaussianBelief, z, H, R) -> float:
    """log N(z; H x, R), the likelihood of the posterior mean alone."""
    r = np.asarray(z, dtype=float) - H @ belief.mean
    return gaussian_logpdf(r, R)


# -- projections ----------------------------------------------------------------

def _equality_solve(x0, S, A, b):
    """Minimizer of the S^-1 metric distance to x0 on A x = b, and its multipliers."""
    if A.shape[0] == 0:
        return x0.copy(), np.zeros(0), None
    SAt = S @ A.T
    G = A @ SAt
    if np.linalg.cond(G) > COND_LIMIT:
        return None, None, None
    lam = np.linalg.solve(G, b - A @ x0)
    return x0 + SAt @ lam, lam, G


def _gamma(S, A):
    if A.shape[0] == 0:
        return np.zeros((S.shape[0], 0))
    SAt = S @ A.T
    return np.linalg.solve(A @ SAt, SAt.T).T


def _reduce_cov(P, gamma, A):
    """(I - gamma A) P (I - gamma A)^T; equals (I - gamma A) P when W = P^-1."""
    if A.shape[0] == 0:
        return P.copy()
    I_gA = np.eye(P.shape[0]) - gamma @ A
    return symmetrize(I_gA @ P @ I_gA.T)


def _resolve_metric(belief, W, W_inv):
    if W_inv is not None:
        return np.asarray(W_inv, dtype=float)
    if W is None:
        return np.eye(belief.dim)
    if isinstance(W, (str, Weighting)):
        return weight_inverse(belief.cov, W)
    return np.linalg.inv(np.asarray(W, dtype=float))


def project_equality(belief: GaussianBelief, cs: ConstraintSet, W=None, W_inv=None) -> ProjectionResult:
    """Closed-form projection onto the equality rows of ``cs``.

    ``W`` is the metric matrix (or a Weighting); ``W_inv`` may be passed
    instead to avoid an inversion. Default metric is the identity.
    """
    S = _resolve_metric(belief, W, W_inv)
    A, b = cs.A_eq, cs.b_eq
    x, lam, _ = _equality_solve(belief.mean, S, A, b)
    if x is None:
        return ProjectionResult(belief.copy(), gamma=None, status=QpStatus.RANK_DEFICIENT)
    g = _gamma(S, A)
    return ProjectionResult(GaussianBelief(x, _reduce_cov(belief.cov, g, A)), (), g, 0,
                            QpStatus.OPTIMAL, lam)


def solve_constrained_qp(belief: GaussianBelief, cs: ConstraintSet, W=None, W_inv=None,
                         max_changes: int = MAX_CHANGES, tol: float = KKT_TOL) -> ProjectionResult:
    """Dual active-set (Goldfarb-Idnani) QP from the equality projection.

    The most violated inequality is added each round; working-set rows whose
    multipliers would turn negative are dropped on the way. On an empty
    feasible region or too many active-set changes the unprojected belief is
    returned with the corresponding status.
    """
    S = _resolve_metric(belief, W, W_inv)
    x0 = belief.mean
    A_eq, b_eq, A_in, b_in = cs.A_eq, cs.b_eq, cs.A_ineq, cs.b_ineq
    ne = A_eq.shape[0]
    x, lam_eq, _ = _equality_solve(x0, S, A_eq, b_eq)
    if x is None:
        return ProjectionResult(belief.copy(), status=QpStatus.RANK_DEFICIENT)
    work: list[int] = []
    lam_in: list[float] = []
    changes = 0
    status = QpStatus.OPTIMAL
    while True:
        if A_in.shape[0] == 0:
            break
        viol = A_in @ x - b_in
        viol[work] = np.inf
        j = int(np.argmin(viol))
        if viol[j] >= -tol:
            break
        n = A_in[j]
        t_j = 0.0
        while True:
            if changes >= max_changes:
                status = QpStatus.MAX_ITERATIONS
                break
            A_act = np.vstack([A_eq, A_in[work]]) if work else A_eq
            if A_act.shape[0]:
                SAt = S @ A_act.T
                G = A_act @ SAt
                r = np.linalg.lstsq(G, SAt.T @ n, rcond=None)[0]
                z = S @ n - SAt @ r
            else:
                r = np.zeros(0)
                z = S @ n
            r_in = r[ne:]
            # largest dual step before an active inequality multiplier hits zero
            t_dual, k_drop = np.inf, -1
            for k, rk in enumerate(r_in):
                if rk > 1e-12 and lam_in[k] / rk < t_dual:
                    t_dual, k_drop = lam_in[k] / rk, k
            nz = n @ z
            s = b_in[j] - n @ x
            # n in the span of the working rows -> only a dual step is possible
            t_prim = s / nz if nz > 1e-9 * (n @ S @ n) else np.inf
            if not np.isfinite(t_prim) and not np.isfinite(t_dual):
                status = QpStatus.INFEASIBLE
                break
            t = min(t_prim, t_dual)
            if np.isfinite(t_prim):
                x = x + t * z
            lam_eq = lam_eq - t * r[:ne] if ne else lam_eq
            lam_in = [l - t * rk for l, rk in zip(lam_in, r_in)]
            t_j += t
            changes += 1
            if t_prim <= t_dual:
                work.append(j)
                lam_in.append(t_j)
                break
            del work[k_drop]
            del lam_in[k_drop]
        if status is not QpStatus.OPTIMAL:
            break
    if status is not QpStatus.OPTIMAL:
        return ProjectionResult(belief.copy(), tuple(work), None, changes, status)
    g = _gamma(S, A_eq)
    P = _reduce_cov(belief.cov, g, A_eq)
    mult = np.concatenate([lam_eq, np.asarray(lam_in)]) if ne or lam_in else np.zeros(0)
    return ProjectionResult(GaussianBelief(x, P), tuple(sorted(work)), g, changes,
                            QpStatus.OPTIMAL, mult)
