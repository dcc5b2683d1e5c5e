import numpy as np
import pytest

from contact_rbpf.bodies import RigidBody2D, box, check_convex_ccw, rotation, triangle
from contact_rbpf.contacts import detect_contacts, detect_contacts_batch, min_gap


def floor(**kw):
    return box(0, 10.0, 1.0, pose=(0.0, -0.5, 0.0), is_static=True, **kw)


def test_box_vertices_are_ccw_about_centre():
    b = box(1, 2.0, 1.0)
    assert np.allclose(b.vertices.mean(axis=0), 0.0)
    check_convex_ccw(b.vertices)
    assert b.inertia == pytest.approx((4.0 + 1.0) / 12.0)


def test_triangle_centroid_and_inertia():
    t = triangle(1, 1.0, 0.8, mass=2.0)
    assert np.allclose(t.vertices.mean(axis=0), 0.0)
    # for a triangle about its centroid, J = m/12 * sum |v_i|^2
    brute = 2.0 / 12.0 * np.sum(t.vertices ** 2)
    assert t.inertia == pytest.approx(brute)


def test_clockwise_polygon_rejected():
    with pytest.raises(ValueError):
        RigidBody2D(1, 1.0, 1.0, (0, 0, 0), (0, 0, 0), np.array([[0, 0], [0, 1], [1, 0]]))


def test_static_body_has_infinite_mass():
    f = floor()
    assert np.isinf(f.mass) and f.is_static


def test_world_vertices_follow_pose():
    b = box(1, 2.0, 2.0, pose=(1.0, 2.0, np.pi / 2))
    expected = b.vertices @ rotation(np.pi / 2).T + [1.0, 2.0]
    assert np.allclose(b.world_vertices(), expected)
    moved = b.moved(pose=(0.0, 0.0, 0.0))
    assert np.allclose(moved.world_vertices(), b.vertices)
    assert np.allclose(b.world_vertices(), expected)


def test_point_velocity_rigid():
    b = box(1, 1.0, 1.0, velocity=(1.0, 0.0, 2.0))
    assert np.allclose(b.point_velocity(np.array([0.0, 1.0])), [-1.0, 0.0])


def test_resting_box_gives_two_zero_gap_candidates():
    cands = detect_contacts([floor(), box(1, 1.0, 1.0, pose=(0.0, 0.5, 0.0))], 0.01)
    assert len(cands) == 2
    assert {c.vertex for c in cands} == {0, 1}
    for c in cands:
        assert abs(c.gap) < 1e-12
        assert np.allclose(c.normal, [0.0, 1.0])
        assert (c.body_a, c.body_b) == (1, 0)


def test_box_far_above_floor_has_no_candidates():
    assert detect_contacts([floor(), box(1, 1.0, 1.0, pose=(0.0, 1.5, 0.0))], 0.01) == []


def test_triangle_vertex_near_tilted_face():
    tilt = 0.3
    n = rotation(tilt) @ np.array([0.0, 1.0])
    finger = box(0, 4.0, 0.4, pose=(*(-0.2 * n), tilt), is_static=True)
    tri = triangle(1, 1.0, 0.8)
    # rotate so the apex points along -n and sits 0.005 from the face
    theta = tilt + np.pi
    apex = rotation(theta) @ tri.vertices[2]
    c = 0.005 * n - apex
    tri = tri.moved(pose=(c[0], c[1], theta))
    cands = detect_contacts([finger, tri], 0.01)
    assert len(cands) == 1
    assert cands[0].gap == pytest.approx(0.005, abs=1e-9)
    assert np.allclose(cands[0].normal, n)


def test_penetration_is_negative_gap():
    cands = detect_contacts([floor(), box(1, 1.0, 1.0, pose=(0.0, 0.49, 0.0))], 0.01)
    assert all(c.gap == pytest.approx(-0.01) for c in cands)


def test_batch_detection_matches_single():
    rng = np.random.default_rng(3)
    bodies = [floor(), box(1, 1.0, 0.7, pose=(0.0, 0.36, 0.1))]
    poses = rng.normal([0.0, 0.36, 0.0], [0.3, 0.01, 0.1], size=(20, 3))
    batch = detect_contacts_batch(bodies, {1: poses}, 0.02)
    for pose, got in zip(poses, batch):
        single = detect_contacts([bodies[0], bodies[1].moved(pose=pose)], 0.02)
        assert [c.key for c in got] == [c.key for c in single]
        assert np.allclose([c.gap for c in got], [c.gap for c in single])


def test_min_gap_reports_margin_when_nothing_near():
    assert min_gap([floor(), box(1, 1.0, 1.0, pose=(0.0, 3.0, 0.0))], 1, margin=0.05) == 0.05
