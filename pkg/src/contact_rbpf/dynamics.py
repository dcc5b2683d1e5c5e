"""Assembly of the time-stepping contact LCP and ground-truth stepping.

Generalized coordinates are stacked per dynamic body as (x, y, theta) in the
order the bodies appear in the input list. Static bodies contribute no
degrees of freedom; if they carry a velocity they are treated as
kinematically scripted and their motion enters the constant terms.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .bodies import dynamic_bodies
from .contacts import detect_contacts

log = logging.getLogger(__name__)

GRAVITY = (0.0, -9.81)


def _cross(r, n):
    return r[0] * n[1] - r[1] * n[0]


@dataclass
class PinJoint:
    """Bilateral pin between an anchor on ``body_a`` and one on ``body_b``.

    ``body_b=None`` pins to the world point ``anchor_b``.
    """

    body_a: int
    anchor_a: np.ndarray
    body_b: int | None = None
    anchor_b: np.ndarray = field(default_factory=lambda: np.zeros(2))


@dataclass
class LcpSystem:
    """Matrices and vectors of one time step of the contact LCP.

    ``b_n`` holds the constant terms of the normal rows (gap / h plus the gap
    rate induced by scripted bodies); ``b_f`` the friction rows (tangential
    motion of scripted bodies); ``b_b`` the joint rows.
    """

    M: np.ndarray
    G_n: np.ndarray
    G_f: np.ndarray
    G_b: np.ndarray
    E: np.ndarray
    U: np.ndarray
    psi: np.ndarray
    b_n: np.ndarray
    b_f: np.ndarray
    b_b: np.ndarray
    p_app: np.ndarray
    v: np.ndarray
    q: np.ndarray
    h: float
    contacts: list = field(default_factory=list)
    body_ids: tuple = ()

    @property
    def n_dof(self) -> int:
        return self.M.shape[0]

    @property
    def n_contacts(self) -> int:
        return self.G_n.shape[1]

    @cached_property
    def m_inv(self) -> np.ndarray:
        # M is diagonal (one diag(m, m, I) block per body)
        return 1.0 / np.diag(self.M)

    @cached_property
    def M_inv(self) -> np.ndarray:
        return np.diag(self.m_inv)

    @property
    def momentum_term(self) -> np.ndarray:
        """Constant of the Newton-Euler row, M v_t + p_app."""
        return self.M @ self.v + self.p_app

    @cached_property
    def mu(self) -> np.ndarray:
        return np.diag(self.U).copy()

    def contact_of_friction_row(self, r: int) -> int:
        return r // 2


def _dof_index(bodies):
    return {b.id: 3 * k for k, b in enumerate(dynamic_bodies(bodies))}


def assemble_lcp(bodies, contacts, external_forces=None, h: float = 0.01,
                 gravity=GRAVITY, joints=()) -> LcpSystem:
    """Assemble the LCP of one step at the current configuration.

    ``external_forces`` maps body id to a planar wrench (fx, fy, tau);
    missing bodies get zero. The applied impulse is (f_ext + m g) h.
    """
    if not h > 0:
        raise ValueError("time step h must be positive")
    external_forces = external_forces or {}
    by_id = {b.id: b for b in bodies}
    dof = _dof_index(bodies)
    dyn = dynamic_bodies(bodies)
    nd = 3 * len(dyn)
    nc = len(contacts)

    M = np.zeros((nd, nd))
    p_app = np.zeros(nd)
    v = np.zeros(nd)
    q = np.zeros(nd)
    g = np.asarray(gravity, dtype=float)
    for b in dyn:
        i = dof[b.id]
        M[i:i + 3, i:i + 3] = b.mass_block()
        f = np.asarray(external_forces.get(b.id, np.zeros(3)), dtype=float)
        if f.shape != (3,):
            raise ValueError(f"wrench for body {b.id} must be a 3-vector")
        p_app[i:i + 3] = (f + np.array([b.mass * g[0], b.mass * g[1], 0.0])) * h
        v[i:i + 3] = b.velocity
        q[i:i + 3] = b.pose
    for k in external_forces:
        if k not in by_id:
            raise ValueError(f"external force for unknown body {k}")

    G_n = np.zeros((nd, nc))
    G_f = np.zeros((nd, 2 * nc))
    E = np.zeros((2 * nc, nc))
    psi = np.zeros(nc)
    b_n = np.zeros(nc)
    b_f = np.zeros(2 * nc)
    mu = np.zeros(nc)
    for c in contacts:
        k = c.id
        if c.body_a not in by_id or c.body_b not in by_id:
            raise ValueError(f"contact {k} references an unknown body")
        nx, ny = float(c.normal[0]), float(c.normal[1])
        px, py = float(c.point[0]), float(c.point[1])
        rate_n = 0.0
        rate_t = 0.0
        for body_id, sign in ((c.body_a, 1.0), (c.body_b, -1.0)):
            body = by_id[body_id]
            rx, ry = px - body.pose[0], py - body.pose[1]
            if body.is_static:
                vx, vy, w = body.velocity
                vpx, vpy = vx - w * ry, vy + w * rx
                rate_n += sign * (nx * vpx + ny * vpy)
                rate_t += sign * (-ny * vpx + nx * vpy)
                continue
            i = dof[body_id]
            G_n[i, k] += sign * nx
            G_n[i + 1, k] += sign * ny
            G_n[i + 2, k] += sign * (rx * ny - ry * nx)
            # tangent t = (-ny, nx)
            G_f[i, 2 * k] += -sign * ny
            G_f[i + 1, 2 * k] += sign * nx
            G_f[i + 2, 2 * k] += sign * (rx * nx + ry * ny)
        G_f[:, 2 * k + 1] = -G_f[:, 2 * k]
        E[2 * k, k] = E[2 * k + 1, k] = 1.0
        psi[k] = c.gap
        b_n[k] = c.gap / h + rate_n
        b_f[2 * k] = rate_t
        b_f[2 * k + 1] = -rate_t
        mu[k] = c.mu

    G_b, b_b = _joint_rows(joints, by_id, dof, nd, h)
    return LcpSystem(M=M, G_n=G_n, G_f=G_f, G_b=G_b, E=E, U=np.diag(mu), psi=psi,
                     b_n=b_n, b_f=b_f, b_b=b_b, p_app=p_app, v=v, q=q, h=h,
                     contacts=list(contacts), body_ids=tuple(b.id for b in dyn))


def normal_jacobian(bodies, contacts) -> tuple:
    """(G_n, psi) of the candidates only; a light form of ``assemble_lcp``."""
    dof = _dof_index(bodies)
    by_id = {b.id: b for b in bodies}
    nd = 3 * len(dof)
    G_n = np.zeros((nd, len(contacts)))
    for k, c in enumerate(contacts):
        n = c.normal
        for body_id, sign in ((c.body_a, 1.0), (c.body_b, -1.0)):
            i = dof.get(body_id)
            if i is None:
                continue
            r = c.point - by_id[body_id].pose[:2]
            G_n[i, k] += sign * n[0]
            G_n[i + 1, k] += sign * n[1]
            G_n[i + 2, k] += sign * (r[0] * n[1] - r[1] * n[0])
    return G_n, np.array([c.gap for c in contacts])


def _joint_rows(joints, by_id, dof, nd, h):
    rows = []
    consts = []
    for j in joints:
        a = by_id[j.body_a]
        pa = a.pose[:2] + _rot(a.pose[2]) @ np.asarray(j.anchor_a, dtype=float)
        if j.body_b is None:
            pb = np.asarray(j.anchor_b, dtype=float)
            b = None
        else:
            b = by_id[j.body_b]
            pb = b.pose[:2] + _rot(b.pose[2]) @ np.asarray(j.anchor_b, dtype=float)
        for d in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
            col = np.zeros(nd)
            rate = 0.0
            for body, p, sign in ((a, pa, 1.0), (b, pb, -1.0)):
                if body is None:
                    continue
                if body.is_static:
                    rate += sign * (d @ body.point_velocity(p))
                    continue
                i = dof[body.id]
                r = p - body.pose[:2]
                col[i:i + 3] += sign * np.array([d[0], d[1], _cross(r, d)])
            rows.append(col)
            consts.append(d @ (pa - pb) / h + rate)
    if not rows:
        return np.zeros((nd, 0)), np.zeros(0)
    return np.column_stack(rows), np.array(consts)


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


class SolverFailure(RuntimeError):
    pass


def step_world(bodies, external_forces=None, h: float = 0.01, margin: float = 0.01,
               gravity=GRAVITY, joints=(), solve_kwargs=None):
    """Advance the world by one step; returns (new bodies, LcpSolution).

    Dynamic bodies take v_{t+1} from the LCP and q_{t+1} = q_t + h v_{t+1};
    static bodies are advanced by their own (scripted) velocity.
    """
    from .lcp import SolveStatus, solve

    contacts = detect_contacts(bodies, margin)
    sys = assemble_lcp(bodies, contacts, external_forces, h, gravity, joints)
    sol = solve(sys, **(solve_kwargs or {}))
    if sol.status is SolveStatus.INFEASIBLE:
        raise SolverFailure("contact LCP infeasible")
    if sol.status is not SolveStatus.SOLVED:
        log.warning("LCP solved by fallback (%s)", sol.status.value)
    dof = _dof_index(bodies)
    out = []
    for b in bodies:
        if b.is_static:
            out.append(b.moved(pose=b.pose + h * b.velocity))
        else:
            i = dof[b.id]
            vn = sol.v_next[i:i + 3].copy()
            out.append(b.moved(pose=b.pose + h * vn, velocity=vn))
    return out, sol
