from dataclasses import replace

import numpy as np
import pytest

from contact_rbpf.bodies import box
from contact_rbpf.contact_model import ContactLabel, ContactState, index_sets, labels_from_solution
from contact_rbpf.lcp import solve
from contact_rbpf.transition import derive_transition, lift_noise

from worlds import random_system, resting_box, system_of


def labels(sys, *lab):
    return ContactState(tuple(lab), tuple(c.key for c in sys.contacts))


def test_free_flight_is_identity_plus_applied_impulse():
    s = system_of([box(1, 1.0, 2.0, mass=3.0, velocity=(1.0, 0.5, 0.2))], {1: np.array([2.0, 0.0, 0.1])})
    tr = derive_transition(s, index_sets(ContactState((), ())))
    assert np.allclose(tr.A, np.eye(3))
    assert np.allclose(tr.Bu, s.m_inv * s.p_app)
    assert not tr.regularized


def test_sticking_contact_velocity_rows_vanish():
    s = system_of(resting_box(velocity=(0.3, -0.2, 0.1)), {1: np.array([1.0, 0.0, 0.0])})
    # one sticking, one separated contact
    idx = index_sets(labels(s, ContactLabel.STICKING, ContactLabel.SEPARATED))
    tr = derive_transition(s, idx)
    rng = np.random.default_rng(0)
    for v in rng.normal(size=(20, 3)):
        Av = tr.A @ v
        assert abs(s.G_n[:, 0] @ Av) < 1e-10
        assert abs(s.G_f[:, 0] @ Av) < 1e-10


def test_active_normal_rows_embedded():
    s = system_of(resting_box(velocity=(0.0, -0.4, 0.0), y=0.502))
    idx = index_sets(labels(s, ContactLabel.STICKING, ContactLabel.STICKING))
    tr = derive_transition(s, idx)
    rng = np.random.default_rng(1)
    for v in rng.normal(size=(10, 3)):
        gn = s.G_n.T @ tr.apply(v) + s.b_n
        assert np.abs(gn).max() < 1e-9


def test_redundant_geometry_is_regularized():
    # both bottom contacts sticking pins all three dofs; add a coincident copy
    s = system_of(resting_box())
    dup = replace(s, G_n=np.hstack([s.G_n, s.G_n[:, :1]]), G_f=np.hstack([s.G_f, s.G_f[:, :2]]),
                  E=np.kron(np.eye(3), np.ones((2, 1))), U=0.5 * np.eye(3), psi=np.zeros(3),
                  b_n=np.zeros(3), b_f=np.zeros(6), contacts=s.contacts + [s.contacts[0]])
    tr = derive_transition(dup, index_sets(ContactState((ContactLabel.STICKING,) * 3, ("a", "b", "c"))))
    assert tr.regularized
    assert np.all(np.isfinite(tr.A))


def test_lift_integrates_poses():
    s = system_of([box(1, 1.0, 1.0, velocity=(1.0, 0.0, 0.0))], h=0.02)
    T, b = derive_transition(s, index_sets(ContactState((), ()))).lift()
    x = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 0.0])
    x1 = T @ x + b
    assert np.allclose(x1[3:], x[3:] + s.m_inv * s.p_app)
    assert np.allclose(x1[:3], x[:3] + 0.02 * x1[3:])


def test_lifted_noise_is_consistent():
    Q = lift_noise(np.diag([1.0, 2.0, 3.0]), 0.1)
    assert Q.shape == (6, 6)
    assert np.allclose(Q, Q.T)
    assert np.all(np.linalg.eigvalsh(Q) >= -1e-12)
    assert np.allclose(Q[:3, :3], 0.01 * np.diag([1.0, 2.0, 3.0]))


@pytest.mark.parametrize("seed", range(4))
def test_transition_reproduces_lcp_step(seed):
    rng = np.random.default_rng(100 + seed)
    worst = 0.0
    for _ in range(25):
        s = random_system(rng)
        sol = solve(s)
        tr = derive_transition(s, index_sets(labels_from_solution(s, sol)))
        worst = max(worst, np.abs(tr.apply(s.v) - sol.v_next).max())
    assert worst <= 1e-7
