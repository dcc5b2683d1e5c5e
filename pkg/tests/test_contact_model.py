import numpy as np
import pytest

from contact_rbpf.bodies import box
from contact_rbpf.contact_model import (ContactLabel, ContactState, activation_probability,
                                        contact_predictions, index_sets, normal_cdf,
                                        sample_contact_state, stick_probability)
from contact_rbpf.contacts import detect_contacts
from contact_rbpf.dynamics import assemble_lcp

L = ContactLabel


def state(*labels):
    return ContactState(tuple(labels), tuple((1, 0, i, 0) for i in range(len(labels))))


def test_all_separated_has_empty_alpha():
    idx = index_sets(state(L.SEPARATED, L.SEPARATED))
    assert idx.empty
    assert idx.beta_n.tolist() == [0, 1] and idx.beta_f.tolist() == [0, 1, 2, 3]
    assert idx.beta_s.tolist() == [0, 1]


def test_single_sticking_index_sets():
    idx = index_sets(state(L.STICKING))
    assert idx.alpha_n.tolist() == [0] and idx.alpha_f.tolist() == [0, 1]
    assert idx.alpha_s.size == 0 and idx.beta_s.tolist() == [0]


def test_single_sliding_pos_index_sets():
    idx = index_sets(state(L.SLIDING_POS))
    assert idx.alpha_n.tolist() == [0] and idx.alpha_f.tolist() == [1]
    assert idx.beta_f.tolist() == [0] and idx.alpha_s.tolist() == [0]


def test_sliding_neg_uses_positive_column():
    idx = index_sets(state(L.SEPARATED, L.SLIDING_NEG))
    assert idx.alpha_f.tolist() == [2] and idx.beta_f.tolist() == [0, 1, 3]


def test_activation_probability_limits():
    assert activation_probability(10.0, 1.0) == pytest.approx(normal_cdf(-10.0))
    assert activation_probability(10.0, 1.0) < 1e-20
    assert activation_probability(0.0, 0.3) == pytest.approx(0.5)
    assert activation_probability(-1e-3, 0.0) == 1.0


def test_stick_probability_at_rest_exceeds_half():
    assert stick_probability(0.0, 0.01, band=1e-3) == pytest.approx(normal_cdf(0.1))
    assert stick_probability(0.0, 0.01, band=1e-3) > 0.5


def _pressed_box():
    bodies = [box(0, 10.0, 1.0, pose=(0.0, -0.5, 0.0), is_static=True),
              box(1, 1.0, 1.0, pose=(0.0, 0.5, 0.0))]
    return assemble_lcp(bodies, detect_contacts(bodies, 0.01), {}, 0.01)


def test_pressed_box_sticks_more_often_than_not():
    s = _pressed_box()
    mean = np.concatenate([s.q, s.v])
    cov = 1e-4 * np.eye(6)
    counts = {lab: 0 for lab in L}
    for seed in range(400):
        st = sample_contact_state(mean, cov, None, s, np.random.default_rng(seed))
        for lab in st.labels:
            counts[lab] += 1
    _, _, vt, s_v = contact_predictions(s, mean, cov)
    p_stick = stick_probability(vt[0], s_v[0])
    assert p_stick > 0.5
    active = counts[L.STICKING] + counts[L.SLIDING_POS] + counts[L.SLIDING_NEG]
    assert counts[L.STICKING] / active == pytest.approx(p_stick, abs=0.06)


def test_sampling_is_seed_deterministic():
    s = _pressed_box()
    mean = np.concatenate([s.q, s.v])
    a = sample_contact_state(mean, np.eye(6) * 1e-4, None, s, np.random.default_rng(5))
    b = sample_contact_state(mean, np.eye(6) * 1e-4, None, s, np.random.default_rng(5))
    assert a == b and a.keys == tuple(c.key for c in s.contacts)


def test_hysteresis_raises_activation():
    s = _pressed_box()
    mean = np.concatenate([s.q + np.array([0.0, 0.005, 0.0]), s.v])
    cov = 1e-6 * np.eye(6)

    def active_rate(prev):
        n = 0
        for seed in range(300):
            st = sample_contact_state(mean, cov, prev, s, np.random.default_rng(seed))
            n += st.n_active()
        return n

    prev = ContactState((L.STICKING, L.STICKING), tuple(c.key for c in s.contacts))
    assert active_rate(prev) > active_rate(None)


def test_no_candidates_gives_empty_state():
    bodies = [box(1, 1.0, 1.0)]
    s = assemble_lcp(bodies, [], {}, 0.01)
    st = sample_contact_state(np.zeros(6), np.eye(6), None, s, np.random.default_rng(0))
    assert len(st) == 0
