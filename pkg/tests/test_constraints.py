import numpy as np
import pytest

from contact_rbpf.constraints import (Binds, ConstraintSet, build_current, build_previous, finalize,
                                      impulse_expression, prune_redundant)
from contact_rbpf.contact_model import ContactLabel, ContactState, index_sets, labels_from_solution
from contact_rbpf.dynamics import GRAVITY
from contact_rbpf.lcp import solve

from worlds import random_system, resting_box, system_of

FREE = index_sets(ContactState((), ()))


def state(sys, *labels):
    return ContactState(tuple(labels), tuple(c.key for c in sys.contacts))


def lifted(sys):
    return np.concatenate([sys.q, sys.v])


def test_empty_mode_has_zero_impulses():
    s = system_of(resting_box())
    idx = index_sets(state(s, ContactLabel.SEPARATED, ContactLabel.SEPARATED))
    ex = impulse_expression(s, idx)
    assert np.all(ex.L == 0) and np.all(ex.c == 0)
    cur = build_current(s, idx, ex, lifted(s))
    assert cur.n_eq == 0
    # both normal rows, as velocity and position inequalities
    assert cur.n_ineq == 4
    prev = build_previous(s, idx, ex)
    assert prev.empty and prev.binds is Binds.PREVIOUS


def test_resting_box_impulses_carry_weight():
    s = system_of(resting_box())
    sol = solve(s)
    st = labels_from_solution(s, sol)
    ex = impulse_expression(s, index_sets(st))
    pn, pf, _ = ex.split(lifted(s))
    assert pn.sum() == pytest.approx(-GRAVITY[1] * 1.0 * s.h, rel=1e-9)
    assert np.allclose(s.G_n @ pn + s.G_f @ pf, s.G_n @ sol.p_n + s.G_f @ sol.p_f, atol=1e-10)


def test_sticking_contact_rows_pin_contact_velocity():
    s = system_of(resting_box(y=0.503, velocity=(0.2, -0.3, 0.0)))
    idx = index_sets(state(s, ContactLabel.STICKING, ContactLabel.SEPARATED))
    ex = impulse_expression(s, idx)
    cur = build_current(s, idx, ex, lifted(s), position_rows=False)
    nd = s.n_dof
    # any v meeting the equalities has normal velocity -psi/h and zero slip at contact 0
    v = np.linalg.lstsq(cur.A_eq[:, nd:], cur.b_eq, rcond=None)[0]
    assert s.G_n[:, 0] @ v == pytest.approx(-s.psi[0] / s.h, abs=1e-12)
    assert s.G_f[:, 0] @ v == pytest.approx(0.0, abs=1e-12)
    assert np.all(cur.A_eq[:, :nd] == 0)


def test_equality_rows_are_unit_scaled():
    s = system_of(resting_box(y=0.502))
    idx = index_sets(state(s, ContactLabel.SLIDING_POS, ContactLabel.STICKING))
    cur = build_current(s, idx, impulse_expression(s, idx), lifted(s))
    assert np.allclose(np.abs(cur.A_eq).max(axis=1), 1.0)
    assert np.allclose(np.abs(cur.A_ineq).max(axis=1), 1.0)


def test_vacuous_and_redundant_rows_dropped():
    A = np.array([[1.0, 0.0], [1e-14, 0.0], [2.0, 0.0], [0.0, 3.0]])
    cs = finalize(A, np.array([1.0, 0.0, 2.0, 3.0]), np.zeros((0, 2)), np.zeros(0), Binds.CURRENT)
    assert cs.n_eq == 2
    assert np.linalg.matrix_rank(cs.A_eq) == 2
    A2, b2, _ = prune_redundant(np.array([[1.0, 1.0], [2.0, 2.0]]), np.array([1.0, 2.0]))
    assert A2.shape == (1, 2)


def check_feasible(sys, sol, x_next=None):
    idx = index_sets(labels_from_solution(sys, sol))
    x = lifted(sys)
    x1 = np.concatenate([sys.q + sys.h * sol.v_next, sol.v_next]) if x_next is None else x_next
    ex = impulse_expression(sys, idx, x)
    worst_eq, worst_in = 0.0, 0.0
    for cs, xx in ((build_current(sys, idx, ex, x), x1), (build_previous(sys, idx, ex), x)):
        r_eq, r_in = cs.residuals(xx)
        worst_eq = max(worst_eq, np.abs(r_eq).max(initial=0.0))
        worst_in = max(worst_in, -r_in.min(initial=0.0))
    return worst_eq, worst_in


def test_sliding_cone_row_holds_at_oracle():
    # a hard push beyond the friction limit slides
    bodies = resting_box(mu=0.3)
    s = system_of(bodies, {1: np.array([20.0, 0.0, 0.0])})
    sol = solve(s)
    st = labels_from_solution(s, sol)
    assert all(l in (ContactLabel.SLIDING_POS, ContactLabel.SLIDING_NEG) for l in st.labels)
    pn, pf, _ = impulse_expression(s, index_sets(st)).split(lifted(s))
    for i in range(2):
        assert 0.3 * pn[i] - pf[2 * i] - pf[2 * i + 1] == pytest.approx(0.0, abs=1e-9)
    eq, ineq = check_feasible(s, sol)
    assert eq <= 1e-7 and ineq <= 1e-7


@pytest.mark.parametrize("seed", range(4))
def test_oracle_pair_satisfies_all_sets(seed):
    rng = np.random.default_rng(200 + seed)
    for _ in range(25):
        s = random_system(rng)
        eq, ineq = check_feasible(s, solve(s))
        assert eq <= 1e-7 and ineq <= 1e-7


def test_set_helpers():
    cs = ConstraintSet(np.eye(2), np.ones(2), np.eye(2)[:1], np.zeros(1), eq_kind=("velocity", "position"),
                       ineq_kind=("position",))
    assert cs.only(("position",)).n_eq == 1
    assert cs.only(("velocity",)).n_ineq == 0
    ext = cs.extended(np.zeros((0, 2)), np.zeros(0), np.array([[0.0, 2.0]]), np.array([1.0]))
    assert ext.n_ineq == 2 and np.allclose(ext.A_ineq[1], [0.0, 1.0])
