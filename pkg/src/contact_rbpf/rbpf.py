"""Contact-based Rao-Blackwellized particle filters.

Each particle carries a sampled contact mode and a Gaussian belief over
x = [q; v] of the dynamic bodies. ``rbpf_step`` is the plain filter;
``crbpf_step`` adds the two constrained projections (on x_t before the
prediction, on x_{t+1} after the correction).
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .bodies import dynamic_bodies
from .constraints import (ConstraintSet, build_current, build_previous, empty_set, impulse_expression,
                          position_rows, prune_redundant)
from .contact_model import (HYSTERESIS, V_STICK_BAND, ContactState, contact_predictions, index_sets,
                            sample_contact_state)
from .contacts import detect_contacts, detect_contacts_batch
from .dynamics import GRAVITY, assemble_lcp, normal_jacobian
from .estimation import (GaussianBelief, ProjectionResult, Weighting, kalman_batch, project_equality,
                         residual_loglik, solve_constrained_qp, weight_inverse)
from .transition import derive_transition, derive_transitions, lift_noise

log = logging.getLogger(__name__)

PENETRATION_TOL = 1e-7
REFINE_ITERS = 5
GAP_REPORT_MARGIN = 1e-3
# squared metric length beyond which a projection is treated as infeasible
MAX_PROJECTION_D2 = 100.0
# rank tolerance for equality rows that are independent only through tiny angles
COARSE_RANK_RTOL = 1e-4


class ParticleFailure(RuntimeError):
    """A numerical failure inside one particle's update."""

    def __init__(self, particle: int, msg: str):
        super().__init__(f"particle {particle}: {msg}")
        self.particle = particle


class Mode(enum.Enum):
    UNCONSTRAINED = "unconstrained"
    CONSTRAINED = "constrained"


class Likelihood(enum.Enum):
    PREDICTIVE = "predictive"
    POSTERIOR_RESIDUAL = "posterior_residual"


@dataclass
class FilterConfig:
    n_particles: int = 50
    Q_process: np.ndarray = None   # velocity-block covariance (3 n_b square) or its diagonal
    R_meas: np.ndarray = None      # pose measurement covariance (3 n_b square) or its diagonal
    resample_threshold: float = 0.5
    mode: Mode = Mode.CONSTRAINED
    W_choice: Weighting = Weighting.IDENTITY
    seed: int = 0
    likelihood: Likelihood = Likelihood.PREDICTIVE
    margin: float = 0.01
    stick_band: float = V_STICK_BAND
    hysteresis: float = HYSTERESIS
    position_rows: bool = True
    track_gaps: bool = True

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if not 0.0 < self.resample_threshold <= 1.0:
            raise ValueError("resample_threshold must be in (0, 1]")
        self.mode = Mode(self.mode)
        self.W_choice = Weighting(self.W_choice)
        self.likelihood = Likelihood(self.likelihood)


def _as_cov(a, n):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = np.diag(np.resize(a, n))
    if a.shape != (n, n):
        raise ValueError(f"covariance must be {n}x{n}")
    return a


@dataclass
class StepInput:
    """Everything known about step t -> t+1 apart from the dynamic bodies' state.

    ``bodies`` is the full body list at time t; the poses and velocities of
    dynamic bodies are placeholders and are replaced by each particle's mean.
    """

    bodies: list
    forces: dict = field(default_factory=dict)
    h: float = 0.01
    gravity: tuple = GRAVITY
    joints: tuple = ()

    def next_static(self):
        """Static bodies advanced to time t+1."""
        return [b.moved(pose=b.pose + self.h * b.velocity) for b in self.bodies if b.is_static]


@dataclass
class Measurement:
    t: int
    z: np.ndarray


@dataclass
class Particle:
    contact_state: ContactState
    belief: GaussianBelief
    weight: float
    flags: dict = field(default_factory=dict)


def initial_particles(mean, cov, n) -> list[Particle]:
    return [Particle(ContactState((), ()), GaussianBelief(np.array(mean, dtype=float),
                                                          np.array(cov, dtype=float)), 1.0 / n)
            for _ in range(n)]


def bodies_at(u: StepInput, x) -> list:
    """Body list of ``u`` with dynamic bodies placed at state x = [q; v]."""
    dyn = dynamic_bodies(u.bodies)
    nd = 3 * len(dyn)
    q, v = x[:nd], x[nd:]
    out = []
    k = 0
    for b in u.bodies:
        if b.is_static:
            out.append(b)
        else:
            out.append(b.moved(pose=q[3 * k:3 * k + 3].copy(), velocity=v[3 * k:3 * k + 3].copy()))
            k += 1
    return out


def measurement_matrix(nd: int) -> np.ndarray:
    return np.hstack([np.eye(nd), np.zeros((nd, nd))])


def step_uniforms(seed, step, n, nc) -> np.ndarray:
    """Mode-sampling uniforms of a step: row i belongs to particle i."""
    return np.random.default_rng([seed, step, 0]).random((n, nc, 3))


# -- non-penetration refinement --------------------------------------------------

def _static_candidates(u: StepInput, x, margin):
    bodies = bodies_at(replace(u, bodies=_next_env(u)), x)
    static = {b.id for b in bodies if b.is_static}
    cands = [c for c in detect_contacts(bodies, margin, validate=False)
             if c.body_a in static or c.body_b in static]
    return bodies, cands


def gap_rows(u: StepInput, x, margin=0.0, eq_keys=frozenset()):
    """Position rows linearized at x against static bodies at t+1.

    Contacts whose key is in ``eq_keys`` give g^T q = g^T q0 - gap0, the
    others g^T q >= g^T q0 - gap0. Returns (A_eq, b_eq, A_in, b_in, min_gap)
    over x = [q; v].
    """
    nd = x.shape[0] // 2
    bodies, cands = _static_candidates(u, x, margin)
    if not cands:
        z = np.zeros((0, 2 * nd))
        return z, np.zeros(0), z, np.zeros(0), np.inf
    G_n, psi = normal_jacobian(bodies, cands)
    A, b = position_rows(G_n, psi, x[:nd], nd)
    eq = np.array([c.key in eq_keys for c in cands])
    return A[eq], b[eq], A[~eq], b[~eq], float(psi.min())


def _next_env(u: StepInput):
    nxt = iter(u.next_static())
    return [next(nxt) if b.is_static else b for b in u.bodies]


def min_static_gap(u: StepInput, x, margin=GAP_REPORT_MARGIN) -> float:
    """Smallest exact signed gap of the dynamic bodies at x to static bodies at t+1."""
    return static_gaps(u, [x], margin)[0]


def static_gaps(u: StepInput, X, margin=GAP_REPORT_MARGIN) -> np.ndarray:
    """``min_static_gap`` for each row of X (inf where nothing is within margin)."""
    found = detect_contacts_batch(_next_env(u), _poses(u, np.asarray(X)), margin, static_only=True)
    return np.array([min(c.gap for c in f) if f else np.inf for f in found])


def _solve_with_fallbacks(belief, cs, S, flags):
    res = solve_constrained_qp(belief, cs, W_inv=S)
    if res.ok:
        return res, cs
    flags["qp_infeasible"] = flags.get("qp_infeasible", 0) + 1
    for sub in (cs.only(("velocity", "position"), ("position",)), cs.only(("position",))):
        res = solve_constrained_qp(belief, sub, W_inv=S)
        if res.ok:
            return res, sub
    return res, cs


def _plausible(belief, res, S) -> bool:
    dx = res.belief.mean - belief.mean
    return bool(dx @ np.linalg.solve(S, dx) <= MAX_PROJECTION_D2)


def _keep_nonpenetration(cs):
    return cs.only((), ("position",))


def _restore(belief, x_lin, A, b, S):
    """Point near x_lin on the rows that are tight there (as equalities), or None.

    Used when the rows linearized at x_lin leave an empty region: the
    first-order error can exceed a tight clearance, and moving the
    linearization point onto the tight rows removes most of it. Rows within
    the worst violation count as tight, so a squeeze is met from both sides.
    """
    r = A @ x_lin - b
    near = r <= max(-r.min(), PENETRATION_TOL)
    A, b, _ = prune_redundant(A[near], b[near], None, COARSE_RANK_RTOL)
    res = project_equality(GaussianBelief(x_lin, belief.cov), ConstraintSet(A, b, A[:0], b[:0]), W_inv=S)
    return res if res.ok else None


def _refine(belief, res, used, tighten, u: StepInput, cfg: FilterConfig, S, flags, eq_keys):
    """Re-linearize the position rows until the mean stops penetrating.

    Returns (result, smallest gap), or (None, gap) when no re-solve works.
    """
    vel = used.only(("velocity",))
    for it in range(REFINE_ITERS + 1):
        A_eq, b_eq, A_in, b_in, g = gap_rows(u, res.belief.mean, cfg.margin, eq_keys)
        if g >= -PENETRATION_TOL or it == REFINE_ITERS:
            return res, g
        r2, _ = _solve_with_fallbacks(belief, tighten(vel.extended(A_eq, b_eq, A_in, b_in)), S, flags)
        if not r2.ok:
            r2 = _restore(belief, res.belief.mean, np.vstack([A_eq, A_in]), np.concatenate([b_eq, b_in]), S)
            if r2 is None:
                return None, g
        res = r2
    return res, g


def project_current(belief, cs, u: StepInput, cfg: FilterConfig, flags: dict, eq_keys=frozenset()):
    """QP on x_{t+1}, with fallbacks and non-penetration refinement.

    The position rows built from the time-t geometry are a first guess; while
    the result still penetrates, all position rows are rebuilt at the latest
    solution against the t+1 geometry and the QP is solved again from the
    unprojected belief.

    Nearly parallel contact normals give equality rows that pass the rank test
    but pin the free directions through a huge condition number. A solution
    that lands implausibly far away, or that cannot be made non-penetrating,
    is retried with those rows pruned at a coarse tolerance, and then with
    the non-penetration rows alone.
    """
    S = weight_inverse(belief.cov, cfg.W_choice)
    ladder = ((lambda c: c, eq_keys), (lambda c: c.pruned(COARSE_RANK_RTOL), eq_keys),
              (_keep_nonpenetration, frozenset()))
    best = None
    for level, (tighten, keys) in enumerate(ladder):
        sub = tighten(cs)
        if sub.empty:
            res, used = ProjectionResult(belief), sub
        else:
            res, used = _solve_with_fallbacks(belief, sub, S, flags)
            if not res.ok:
                continue
            if not _plausible(belief, res, S):
                flags["qp_implausible"] = flags.get("qp_implausible", 0) + 1
                continue
        res, g = _refine(belief, res, used, tighten, u, cfg, S, flags, keys)
        if res is None:
            flags["refine_failed"] = flags.get("refine_failed", 0) + 1
            continue
        if best is None or g > best[1]:
            best = (res.belief, g)
        if g >= -PENETRATION_TOL:
            break
    if best is None:
        best = (belief, min_static_gap(u, belief.mean))
    post, g = best
    flags["min_gap"] = g if g < GAP_REPORT_MARGIN else np.inf
    return post


# -- filter steps ------------------------------------------------------------------

@dataclass
class _StepCache:
    nd: int
    H: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    free: tuple
    # particles that are exact copies (after resampling) share the work:
    # belief -> (candidates, system, contact predictions); (belief, mode) -> result
    prepared: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)


_CONSTANTS: dict = {}


def _constants(u: StepInput, cfg: FilterConfig, nd: int) -> tuple:
    """(H, R, Q, free transition); reused across steps while the inputs are unchanged."""
    key = None
    if not u.joints:
        # without joints the contact-free step depends on masses, forces, h and gravity only
        dyn = tuple((b.id, b.mass, b.inertia) for b in dynamic_bodies(u.bodies))
        forces = tuple(sorted((k, np.asarray(f, dtype=float).tobytes()) for k, f in u.forces.items()))
        key = (dyn, forces, u.h, tuple(u.gravity), np.asarray(cfg.Q_process, dtype=float).tobytes(),
               np.asarray(cfg.R_meas, dtype=float).tobytes())
        if key in _CONSTANTS:
            return _CONSTANTS[key]
    Q_v = _as_cov(cfg.Q_process, nd)
    R = _as_cov(cfg.R_meas, nd)
    if np.any(np.linalg.eigvalsh(R) <= 0):
        raise ValueError("measurement covariance must be positive definite")
    # contact-free transition (identical for all particles)
    sys = assemble_lcp(u.bodies, [], u.forces, u.h, u.gravity, u.joints)
    free = derive_transition(sys, index_sets(ContactState((), ()))).lift()
    out = (measurement_matrix(nd), R, lift_noise(Q_v, u.h), free)
    if key is not None:
        if len(_CONSTANTS) > 64:
            _CONSTANTS.clear()
        _CONSTANTS[key] = out
    return out


def _cache(u: StepInput, cfg: FilterConfig, nd: int) -> _StepCache:
    return _StepCache(nd, *_constants(u, cfg, nd))


def _belief_key(belief: GaussianBelief) -> bytes:
    return belief.mean.tobytes() + belief.cov.tobytes()


def _poses(u: StepInput, X) -> dict:
    """Body id -> stacked poses from states X (n, 2 nd)."""
    X = np.atleast_2d(X)
    return {b.id: X[:, 3 * k:3 * k + 3] for k, b in enumerate(dynamic_bodies(u.bodies))}


def _prepare(belief, u: StepInput, cfg: FilterConfig, cands=None):
    bodies = bodies_at(u, belief.mean)
    if cands is None:
        cands = detect_contacts(bodies, cfg.margin, validate=False)
    if not cands and not u.joints:
        return None
    sys = assemble_lcp(bodies, cands, u.forces, u.h, u.gravity, u.joints)
    return sys, contact_predictions(sys, belief.mean, belief.cov)


@dataclass
class _Job:
    """Work for one distinct (belief, sampled mode) pair of a step."""

    prior: GaussianBelief
    T: np.ndarray
    b: np.ndarray
    cs_cur: ConstraintSet = None
    eq_keys: frozenset = frozenset()
    flags: dict = field(default_factory=dict)


def _before_kalman(belief, prep, state, cfg: FilterConfig, cache: _StepCache, trans=None) -> _Job:
    """Transition of the sampled mode and, when constrained, the projection of x_t."""
    if prep is None:
        return _Job(belief, *cache.free)
    flags = {}
    sys = prep[0]
    idx = index_sets(state)
    if trans is None:
        trans = derive_transition(sys, idx)
    if trans.regularized:
        flags["k_regularized"] = 1
    prior = belief
    cs_cur = None
    if cfg.mode is Mode.CONSTRAINED:
        expr = impulse_expression(sys, idx, belief.mean, trans)
        cs_prev = build_previous(sys, idx, expr, provenance=state.labels)
        if not cs_prev.empty:
            S = weight_inverse(belief.cov, cfg.W_choice)
            res = solve_constrained_qp(belief, cs_prev, W_inv=S)
            if res.ok:
                # the mode may only be reachable by moving along the few directions a
                # collapsed covariance leaves free; such a jump is as bad as no solution
                dx = res.belief.mean - belief.mean
                if dx @ np.linalg.solve(S, dx) <= MAX_PROJECTION_D2:
                    prior = res.belief
                else:
                    flags["qp_implausible"] = flags.get("qp_implausible", 0) + 1
            else:
                flags["qp_infeasible"] = flags.get("qp_infeasible", 0) + 1
        cs_cur = build_current(sys, idx, expr, prior.mean, cfg.position_rows, state.labels)
    eq_keys = frozenset(sys.contacts[i].key for i in idx.alpha_n)
    return _Job(prior, *trans.lift(), cs_cur, eq_keys, flags)


def _after_kalman(post, ll, job: _Job, u: StepInput, z, cfg: FilterConfig, cache: _StepCache):
    flags = dict(job.flags)
    if cfg.mode is Mode.CONSTRAINED:
        # with no sampled constraints the mean is still kept out of static geometry
        cs = job.cs_cur if job.cs_cur is not None else empty_set(post.dim)
        post = project_current(post, cs, u, cfg, flags, job.eq_keys)
    if cfg.likelihood is Likelihood.POSTERIOR_RESIDUAL:
        ll = residual_loglik(post, z, cache.H, cache.R)
    return post, float(ll), flags


def _run_jobs(jobs: dict, u: StepInput, z, cfg: FilterConfig, cache: _StepCache) -> dict:
    """Kalman step of all jobs at once, then the per-job projection."""
    if not jobs:
        return {}
    keys = list(jobs)
    js = [jobs[k] for k in keys]
    mc, Pc, ll = kalman_batch(np.array([j.prior.mean for j in js]), np.array([j.prior.cov for j in js]),
                              np.array([j.T for j in js]), np.array([j.b for j in js]),
                              cache.Q, z, cache.H, cache.R)
    return {k: _after_kalman(GaussianBelief(mc[i], Pc[i]), ll[i], j, u, z, cfg, cache)
            for i, (k, j) in enumerate(zip(keys, js))}


def _sample(p: Particle, prep, cfg: FilterConfig, rng=None, uniforms=None) -> ContactState:
    if prep is None:
        return ContactState((), ())
    return sample_contact_state(p.belief.mean, p.belief.cov, p.contact_state, prep[0], rng,
                                cfg.stick_band, cfg.hysteresis, predictions=prep[1], uniforms=uniforms)


def particle_update(p: Particle, u: StepInput, z, cfg: FilterConfig, rng, cache: _StepCache):
    """One particle through sample -> (project) -> Kalman -> (project) -> likelihood.

    Returns (updated particle, log-likelihood of z).
    """
    key = _belief_key(p.belief)
    if key not in cache.prepared:
        cache.prepared[key] = _prepare(p.belief, u, cfg)
    prep = cache.prepared[key]
    state = _sample(p, prep, cfg, rng)
    rkey = (key, state)
    if rkey not in cache.results:
        job = _before_kalman(p.belief, prep, state, cfg, cache)
        cache.results.update(_run_jobs({rkey: job}, u, z, cfg, cache))
    post, ll, flags = cache.results[rkey]
    return Particle(state, post.copy(), p.weight, dict(flags)), ll


def effective_sample_size(w) -> float:
    w = np.asarray(w)
    return float(1.0 / np.sum(w * w))


def systematic_resample(weights, rng) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def _step(particles, u: StepInput, z, cfg: FilterConfig, step: int):
    z = z.z if isinstance(z, Measurement) else np.asarray(z, dtype=float)
    nd = 3 * len(dynamic_bodies(u.bodies))
    cache = _cache(u, cfg, nd)
    # contact detection for all distinct beliefs at once
    todo = {}
    for p in particles:
        todo.setdefault(_belief_key(p.belief), p.belief)
    found = detect_contacts_batch(u.bodies, _poses(u, [b.mean for b in todo.values()]), cfg.margin)
    for (key, b), cands in zip(todo.items(), found):
        cache.prepared[key] = _prepare(b, u, cfg, cands)
    nc = max((pr[0].n_contacts for pr in cache.prepared.values() if pr is not None), default=0)
    U = step_uniforms(cfg.seed, step, len(particles), nc)
    states, pending = [], {}
    for i, p in enumerate(particles):
        key = _belief_key(p.belief)
        state = _sample(p, cache.prepared[key], cfg, uniforms=U[i])
        states.append((key, state))
        pending.setdefault((key, state), p.belief)
    # transitions of jobs sharing a sampled mode (same candidates and labels) in one batch
    groups = {}
    for (key, state) in pending:
        if cache.prepared[key] is not None:
            groups.setdefault(state, []).append(key)
    trans = {}
    for state, keys in groups.items():
        for key, tr in zip(keys, derive_transitions([cache.prepared[k][0] for k in keys],
                                                    index_sets(state))):
            trans[key, state] = tr
    first = {}
    for i, ks in enumerate(states):
        first.setdefault(ks, i)
    jobs = {}
    try:
        for ks, b in pending.items():
            jobs[ks] = _before_kalman(b, cache.prepared[ks[0]], ks[1], cfg, cache, trans.get(ks))
        cache.results.update(_run_jobs(jobs, u, z, cfg, cache))
    except (np.linalg.LinAlgError, ValueError) as exc:
        bad = next((k for k in pending if k not in jobs), None)
        if bad is None:
            # the batched Kalman step failed; find the job that breaks it
            for k, j in jobs.items():
                try:
                    _run_jobs({k: j}, u, z, cfg, cache)
                except (np.linalg.LinAlgError, ValueError):
                    bad = k
                    break
        raise ParticleFailure(first.get(bad, 0), str(exc)) from exc
    out, lls = [], []
    for p, (key, state) in zip(particles, states):
        post, ll, flags = cache.results[key, state]
        out.append(Particle(state, post.copy(), p.weight, dict(flags)))
        lls.append(ll)
    if cfg.track_gaps and cfg.mode is Mode.UNCONSTRAINED:
        for p, g in zip(out, static_gaps(u, [p.belief.mean for p in out])):
            p.flags["min_gap"] = g
    logw = np.log(np.maximum([p.weight for p in particles], 1e-300)) + np.array(lls)
    finite = np.isfinite(logw)
    if not finite.any():
        log.warning("step %d: all particle weights vanished; resetting to uniform", step)
        w = np.full(len(out), 1.0 / len(out))
    else:
        logw = np.where(finite, logw, -np.inf)
        w = np.exp(logw - logw.max())
        w /= w.sum()
    for p, wi in zip(out, w):
        p.weight = float(wi)
    if effective_sample_size(w) < cfg.resample_threshold * len(out):
        idx = systematic_resample(w, np.random.default_rng([cfg.seed, step, 1]))
        n = len(out)
        out = [Particle(out[j].contact_state, out[j].belief.copy(), 1.0 / n, dict(out[j].flags))
               for j in idx]
    return out


def rbpf_step(particles, u: StepInput, z, cfg: FilterConfig, step: int = 0):
    """Plain contact-based RBPF step."""
    return _step(particles, u, z, replace(cfg, mode=Mode.UNCONSTRAINED), step)


def crbpf_step(particles, u: StepInput, z, cfg: FilterConfig, step: int = 0):
    """Constrained contact-based RBPF step."""
    return _step(particles, u, z, replace(cfg, mode=Mode.CONSTRAINED), step)


def estimate(particles):
    """Weighted mixture mean and total covariance."""
    w = np.array([p.weight for p in particles])
    X = np.array([p.belief.mean for p in particles])
    mean = w @ X
    d = X - mean
    cov = np.einsum("i,ijk->jk", w, np.array([p.belief.cov for p in particles])) + (d.T * w) @ d
    return mean, cov


def direction_uncertainty(particles, d) -> float:
    """Weighted average variance along the unit direction d."""
    d = np.asarray(d, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    n = d.shape[0]
    w = np.array([p.weight for p in particles])
    C = np.array([p.belief.cov[:n, :n] for p in particles])
    return float(w @ np.einsum("i,kij,j->k", d, C, d))
