"""Brute-force reference solvers used as test oracles."""
import itertools

import numpy as np

from contact_rbpf.lcp import reduce


def enumerate_lcp(A, b, tol=1e-9):
    """All solutions of w = A z + b, 0 <= z _|_ w >= 0 found by trying every basis."""
    n = len(b)
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    out = []
    for mask in itertools.product((False, True), repeat=n):
        S = np.flatnonzero(mask)
        z = np.zeros(n)
        if S.size:
            z[S] = np.linalg.lstsq(A[np.ix_(S, S)], -b[S], rcond=None)[0]
        w = A @ z + b
        if (z.min(initial=0.0) >= -tol * scale and w.min(initial=0.0) >= -tol * scale
                and np.abs(w[S]).max(initial=0.0) <= tol * scale):
            out.append(z)
    return out


def enumerated_velocities(sys):
    """v_{t+1} of every solution of the step LCP of ``sys``."""
    red = reduce(sys)
    nc = sys.n_contacts
    J = np.hstack([sys.G_n, sys.G_f])
    return [red.v0 + red.N @ J @ z[:3 * nc] for z in enumerate_lcp(red.A, red.b)]


def brute_force_qp(x0, S, A_eq, b_eq, A_in, b_in, tol=1e-9):
    """min (x - x0)^T S^-1 (x - x0) s.t. A_eq x = b_eq, A_in x >= b_in, by active-set enumeration.

    Returns the minimizer or None when no subset gives a feasible point.
    """
    W = np.linalg.inv(S)
    best = None
    m = A_in.shape[0]
    for k in range(m + 1):
        for sub in itertools.combinations(range(m), k):
            A = np.vstack([A_eq, A_in[list(sub)]])
            b = np.concatenate([b_eq, b_in[list(sub)]])
            if A.shape[0]:
                if np.linalg.matrix_rank(A) < A.shape[0]:
                    continue
                x = x0 + S @ A.T @ np.linalg.solve(A @ S @ A.T, b - A @ x0)
            else:
                x = x0.copy()
            if m and (A_in @ x - b_in).min() < -tol:
                continue
            f = (x - x0) @ W @ (x - x0)
            if best is None or f < best[0] - 1e-12:
                best = (f, x)
    return None if best is None else best[1]
