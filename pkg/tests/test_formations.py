from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.spatial.transform import Rotation

from conftest import MM, rectangle_section
from errors import UnclassifiableError
from formations import (DOFS, CFLabel, CFTrace, ClassifyContext, DofSignature, DofStatus, check_path, classify_cf,
                        classify_state, distinct_contacts, dof_signature, has_flush_contact, twist_feasible,
                        twist_feasible_gap_aware, wall_directions)
from geometry import (Contact, ContactSet, Feature, HoleBoard, Peg, Surface, contact_candidates, dilate_section,
                      make_cross_section, query_contacts)
from models import Pose
from sim_config import DEFAULT_CONFIG

TILTED = np.radians(10.0)
UP = np.array([0.0, 0.0, 1.0])


def _contact(point, normal, surface=Surface.HOLE_WALL, gap=0.0):
    normal = np.asarray(normal, dtype=float)
    return Contact(np.asarray(point, dtype=float), normal / np.linalg.norm(normal), surface, Feature.EDGE, gap)


def _signature(**status):
    values = tuple(status.get(dof, DofStatus.FREE) for dof in ("x", "y", "z", "rx", "ry", "rz"))
    return DofSignature(values, oblique_free=True)


def test_no_contacts_means_every_twist_is_feasible():
    assert twist_feasible(ContactSet(), Pose.identity(), np.array([0, 0, -1, 0, 0, 0.0]), 0.01)
    assert dof_signature(ContactSet(), Pose.identity(), 0.01) == DofSignature.free()


def test_single_plane_contact_blocks_descent_only():
    contacts = ContactSet((_contact([0, 0, 0], UP, Surface.TOP_PLANE),))
    pose = Pose([0.0, 0.0, 0.04])
    assert not twist_feasible(contacts, pose, np.array([0, 0, -1, 0, 0, 0.0]), 0.02)
    assert twist_feasible(contacts, pose, np.array([0, 0, 1, 0, 0, 0.0]), 0.02)
    assert twist_feasible(contacts, pose, np.array([1, 0, 0, 0, 0, 0.0]), 0.02)


def test_flat_face_on_plane_leaves_z_unilateral_and_blocks_tipping_about_the_origin():
    corners = [[0.015, 0.01, 0], [-0.015, 0.01, 0], [-0.015, -0.01, 0], [0.015, -0.01, 0]]
    contacts = ContactSet(tuple(_contact(p, UP, Surface.TOP_PLANE) for p in corners))
    signature = dof_signature(contacts, Pose([0.0, 0.0, 0.04]), 0.018)
    assert signature["z"] == DofStatus.UNILATERAL
    assert signature["x"] == DofStatus.FREE and signature["y"] == DofStatus.FREE
    assert signature["rz"] == DofStatus.FREE
    assert signature.all_blocked("rx", "ry")
    assert signature.oblique_free


def test_gap_aware_test_absorbs_sub_clearance_play():
    contacts = ContactSet((_contact([0.015, 0, -0.03], [-1, 0, 0], gap=0.125 * MM),))
    pose = Pose([0.0, 0.0, 0.0])
    slow = np.array([1e-3, 0, 0, 0, 0, 0.0])
    assert not twist_feasible(contacts, pose, slow, 0.018)
    assert twist_feasible_gap_aware(contacts, pose, slow, 0.018)
    assert not twist_feasible_gap_aware(contacts, pose, np.array([1.0, 0, 0, 0, 0, 0]), 0.018)


def test_rectangle_in_hole_cannot_rotate_about_its_axis(rectangle_peg, rectangle_board):
    pose = Pose([0.0, 0.0, rectangle_peg.length - 0.01])
    near = query_contacts(rectangle_peg, pose, rectangle_board, DEFAULT_CONFIG.clearance_block(0.25 * MM))
    char_length = rectangle_peg.section.bounding_radius
    for sign in (1.0, -1.0):
        assert not twist_feasible_gap_aware(near, pose, np.array([0, 0, 0, 0, 0, sign]), char_length)
    signature = dof_signature(near, pose, char_length, gap_aware=True)
    assert signature.all_blocked("x", "y", "rx", "ry", "rz")
    assert signature["z"] != DofStatus.BLOCKED


DELTA = 1e-5
ORACLE_CONFIG = replace(DEFAULT_CONFIG, FEAS_HORIZON=DELTA)
SHAPES = {
    "circle": make_cross_section(radius=10 * MM),
    "rectangle": rectangle_section(),
}


def _displaced(pose, twist, char_length):
    """Pose moved by DELTA along a unit twist; rotations about the pose origin"""
    if np.any(twist[:3]):
        return pose.with_position(pose.position + DELTA * twist[:3])
    return Pose(pose.position, Rotation.from_rotvec(twist[3:] * DELTA / char_length) * pose.rotation)


def _penetration(peg, pose, board):
    return max(0.0, -float(contact_candidates(peg, pose, board).gaps.min()))


def _tilted_on_plane(peg, rng):
    heading = rng.uniform(0.0, 2.0 * np.pi)
    tilt = np.radians(rng.uniform(5.0, 20.0))
    rotation = (Rotation.from_rotvec(tilt * np.array([np.cos(heading), np.sin(heading), 0.0]))
                * Rotation.from_rotvec([0.0, 0.0, rng.uniform(-np.pi, np.pi)]))
    pose = Pose(np.zeros(3), rotation)
    return pose.with_position([0.0, 0.0, -peg.lowest_bottom_point(pose)[2]])


def _touching_a_wall(peg, board, rng):
    """Nearly upright, 5 mm deep, slid along a random heading until it touches the hole"""
    rotation = Rotation.from_rotvec([*rng.uniform(-7e-4, 7e-4, 2), rng.uniform(-2e-3, 2e-3)])
    heading = rng.uniform(0.0, 2.0 * np.pi)
    direction = np.array([np.cos(heading), np.sin(heading), 0.0])
    start = np.array([0.0, 0.0, peg.length - 5 * MM])
    assert _penetration(peg, Pose(start, rotation), board) == 0.0
    clear, blocked = 0.0, 0.5 * MM
    for _ in range(30):
        middle = 0.5 * (clear + blocked)
        if _penetration(peg, Pose(start + middle * direction, rotation), board) == 0.0:
            clear = middle
        else:
            blocked = middle
    return Pose(start + clear * direction, rotation)


@pytest.mark.parametrize("shape", sorted(SHAPES))
def test_dof_signature_agrees_with_a_penetration_oracle(shape):
    peg = Peg(SHAPES[shape], 0.04)
    char_length = peg.section.bounding_radius
    plane = HoleBoard(None)
    hole = HoleBoard(dilate_section(peg.section, 0.25 * MM))
    rng = np.random.default_rng(5)
    canonical = np.vstack([np.eye(6), -np.eye(6)])
    agree = total = 0
    for i in range(500):
        board = hole if i % 10 == 0 else plane
        pose = _touching_a_wall(peg, board, rng) if board is hole else _tilted_on_plane(peg, rng)
        contacts = query_contacts(peg, pose, board, DEFAULT_CONFIG.CONTACT_TOL)
        assert len(contacts) > 0
        signature = dof_signature(contacts, pose, char_length, gap_aware=True, config=ORACLE_CONFIG)
        clear = [_penetration(peg, _displaced(pose, twist, char_length), board) <= 1e-12 for twist in canonical]
        for axis, dof in enumerate(DOFS):
            plus, minus = clear[axis], clear[6 + axis]
            expected = (DofStatus.FREE if plus and minus
                        else DofStatus.UNILATERAL if plus or minus else DofStatus.BLOCKED)
            total += 1
            if signature[dof] == expected:
                agree += 1
                continue
            # disagreements only on directions that graze a contact
            for twist in (canonical[axis], canonical[6 + axis]):
                linear = twist_feasible_gap_aware(contacts, pose, twist, char_length, horizon=DELTA)
                depth = _penetration(peg, _displaced(pose, twist, char_length), board)
                if linear != (depth <= 1e-12):
                    assert depth <= DELTA
    assert total == 3000
    assert agree >= 0.98 * total


def test_empty_contacts_classify_as_free_space():
    assert classify_cf(ContactSet(), DofSignature.free(), ClassifyContext(tilt=0.0)) == CFLabel.CF0


def test_plane_contacts_only_classify_as_cf1():
    contacts = ContactSet((_contact([0.01, 0, 0], UP, Surface.TOP_PLANE),
                           _contact([0.01, 0.02, 0], UP, Surface.TOP_PLANE)))
    assert classify_cf(contacts, _signature(z=DofStatus.UNILATERAL), ClassifyContext(tilt=TILTED)) == CFLabel.CF1


def test_tilted_edge_on_plane_and_wall_is_cf2():
    contacts = ContactSet((_contact([0.0, 0.0, -0.001], [-1, 0, 0]),
                           _contact([-0.02, 0.0, 0.0], UP, Surface.TOP_PLANE)))
    assert classify_cf(contacts, _signature(), ClassifyContext(tilt=TILTED)) == CFLabel.CF2


def test_two_wall_directions_are_cf3():
    contacts = ContactSet((_contact([0.0, 0.0, -0.001], [-1, 0, 0]),
                           _contact([0.0, 0.0, -0.001], [0, -1, 0]),
                           _contact([-0.02, 0.0, 0.0], UP, Surface.TOP_PLANE)))
    assert wall_directions(contacts.on_surface(Surface.HOLE_WALL)) == 2
    assert classify_cf(contacts, _signature(), ClassifyContext(tilt=TILTED)) == CFLabel.CF3


def test_flush_face_with_blocked_rotation_is_cf4():
    walls = (_contact([0.0, -0.005, -0.001], [-1, 0, 0]), _contact([0.0, 0.005, -0.001], [-1, 0, 0]),
             _contact([-0.01, 0.01, -0.001], [0, -1, 0]))
    contacts = ContactSet(walls + (_contact([-0.02, 0.0, 0.0], UP, Surface.TOP_PLANE),))
    assert has_flush_contact(contacts.on_surface(Surface.HOLE_WALL))
    signature = _signature(rz=DofStatus.BLOCKED)
    assert classify_cf(contacts, signature, ClassifyContext(tilt=TILTED)) == CFLabel.CF4
    assert classify_cf(contacts, _signature(), ClassifyContext(tilt=TILTED)) == CFLabel.CF3


def test_untilted_engaged_peg_with_blocked_lateral_dofs_is_cf5():
    contacts = ContactSet((_contact([0.015, 0.0, -0.01], [-1, 0, 0]),))
    blocked = _signature(x=DofStatus.BLOCKED, y=DofStatus.BLOCKED, rx=DofStatus.BLOCKED,
                         ry=DofStatus.BLOCKED, rz=DofStatus.BLOCKED)
    context = ClassifyContext(tilt=0.0, engaged_depth=0.01, lateral_signature=blocked)
    assert classify_cf(contacts, _signature(), context) == CFLabel.CF5


def test_circle_reaches_cf5_with_rotation_free():
    contacts = ContactSet((_contact([0.01, 0.0, -0.01], [-1, 0, 0]),))
    lateral = _signature(x=DofStatus.BLOCKED, y=DofStatus.BLOCKED, rx=DofStatus.BLOCKED, ry=DofStatus.BLOCKED)
    circle = ClassifyContext(tilt=0.0, engaged_depth=0.01, lateral_signature=lateral, axisymmetric=True)
    assert classify_cf(contacts, _signature(), circle) == CFLabel.CF5
    square = ClassifyContext(tilt=0.0, engaged_depth=0.01, lateral_signature=lateral)
    with pytest.raises(UnclassifiableError):
        classify_cf(contacts, _signature(), square)


def test_bottom_contact_alone_is_unclassifiable():
    contacts = ContactSet((_contact([0.0, 0.0, -0.02], UP, Surface.HOLE_BOTTOM),))
    with pytest.raises(UnclassifiableError):
        classify_cf(contacts, _signature(), ClassifyContext(tilt=0.0))


def test_classify_state_on_simulated_configurations(rectangle_peg, rectangle_board):
    clearance = 0.25 * MM
    resting = Pose([0.1, 0.0, rectangle_peg.length])
    assert classify_state(rectangle_peg, resting, rectangle_board, clearance) == CFLabel.CF1
    hovering = Pose([0.1, 0.0, rectangle_peg.length + 0.01])
    assert classify_state(rectangle_peg, hovering, rectangle_board, clearance) == CFLabel.CF0
    inserted = Pose([0.12 * MM, 0.0, rectangle_peg.length - 0.01])
    assert classify_state(rectangle_peg, inserted, rectangle_board, clearance) == CFLabel.CF5


def test_trace_requires_increasing_time():
    trace = CFTrace()
    trace.record(0.0, CFLabel.CF0, 0)
    with pytest.raises(ValueError):
        trace.record(0.0, CFLabel.CF1, 1)


def _trace(labels):
    trace = CFTrace()
    for i, label in enumerate(labels):
        trace.record(float(i), label, i)
    return trace


def test_full_path_passes():
    labels = [CFLabel.CF0, CFLabel.CF1, CFLabel.CF1, CFLabel.CF2, CFLabel.CF3, CFLabel.CF4, CFLabel.CF5]
    report = check_path(_trace(labels))
    assert report.passed
    assert report.path == tuple(CFLabel)


def test_missing_cf3_fails_at_the_cf4_timestamp():
    report = check_path(_trace([CFLabel.CF0, CFLabel.CF1, CFLabel.CF2, CFLabel.CF4, CFLabel.CF5]))
    assert not report.passed
    assert report.violation_time == 3.0


def test_axisymmetric_path_skips_cf4():
    labels = [CFLabel.CF0, CFLabel.CF1, CFLabel.CF2, CFLabel.CF3, CFLabel.CF5]
    assert check_path(_trace(labels), axisymmetric=True).passed
    assert not check_path(_trace(labels)).passed
    with_cf4 = [CFLabel.CF0, CFLabel.CF1, CFLabel.CF2, CFLabel.CF3, CFLabel.CF4, CFLabel.CF5]
    assert not check_path(_trace(with_cf4), axisymmetric=True).passed


def test_incomplete_path_reports_where_it_stopped():
    report = check_path(_trace([CFLabel.CF0, CFLabel.CF1]))
    assert not report.passed
    assert "CF1" in report.violation


def _near_copy(contact, offset):
    return Contact(contact.point + np.asarray(offset, dtype=float), contact.normal, contact.surface,
                   contact.feature, contact.gap)


WALL_PAIR = (_contact([0.0, -0.001, -0.001], [-1, 0, 0]), _contact([0.0, 0.001, -0.001], [-1, 0, 0]))
ON_PLANE = _contact([-0.02, 0.0, 0.0], UP, Surface.TOP_PLANE)
CF_BASES = {
    CFLabel.CF1: (ContactSet((_contact([0.01, 0, 0], UP, Surface.TOP_PLANE),
                              _contact([0.01, 0.02, 0], UP, Surface.TOP_PLANE))), 0.0),
    CFLabel.CF2: (ContactSet(WALL_PAIR + (ON_PLANE,)), TILTED),
    CFLabel.CF3: (ContactSet((_contact([0.0, 0.0, -0.001], [-1, 0, 0]), _contact([-0.005, 0.004, -0.001], [0, -1, 0]),
                              ON_PLANE)), TILTED),
    CFLabel.CF4: (ContactSet((_contact([0.0, -0.004, -0.001], [-1, 0, 0]), _contact([0.0, 0.004, -0.001], [-1, 0, 0]),
                              ON_PLANE)), TILTED),
}
BASE_POSE = Pose.from_rotvec([-0.01, 0.0, 0.03], [0.0, TILTED, 0.0])


def _label(contacts, tilt):
    signature = dof_signature(contacts, BASE_POSE, 0.018)
    return classify_cf(contacts, signature, ClassifyContext(tilt=tilt))


def test_three_point_pattern_keeps_its_label_with_a_repeated_wall_contact():
    contacts = ContactSet(WALL_PAIR + (ON_PLANE,))
    assert _label(contacts, TILTED) == CFLabel.CF2
    repeated = ContactSet(contacts.contacts + (_near_copy(WALL_PAIR[0], [0.0, -0.2 * MM, 0.0]),))
    assert len(distinct_contacts(repeated)) == 3
    assert _label(repeated, TILTED) == CFLabel.CF2


@pytest.mark.parametrize("label", sorted(CF_BASES))
def test_base_patterns_have_their_labels(label):
    contacts, tilt = CF_BASES[label]
    assert _label(contacts, tilt) == label


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(sorted(CF_BASES)), st.integers(min_value=0, max_value=2),
       st.tuples(*[st.floats(-0.5 * MM, 0.5 * MM, allow_nan=False)] * 3))
def test_repeating_a_contact_within_the_cluster_radius_keeps_the_label(label, index, offset):
    contacts, tilt = CF_BASES[label]
    original = contacts[index % len(contacts)]
    repeated = ContactSet(contacts.contacts + (_near_copy(original, offset),))
    assert _label(repeated, tilt) == label


def test_distinct_contacts_is_idempotent():
    contacts = ContactSet(WALL_PAIR + (ON_PLANE, _near_copy(WALL_PAIR[1], [0.0, 0.3 * MM, 0.0]),
                                       _near_copy(ON_PLANE, [0.5 * MM, 0.0, 0.0])))
    once = distinct_contacts(contacts)
    twice = distinct_contacts(once)
    assert len(once) == 3
    assert_allclose(twice.points, once.points)


def test_constraint_count_grows_along_the_nominal_path():
    growing = [ON_PLANE, WALL_PAIR[0], _contact([-0.005, 0.004, -0.001], [0, -1, 0]),
               _contact([0.0, -0.004, -0.001], [-1, 0, 0]), _contact([0.0, 0.004, -0.001], [-1, 0, 0])]
    counts = [dof_signature(ContactSet(tuple(growing[:n])), BASE_POSE, 0.018).constrained_count
              for n in range(len(growing) + 1)]
    assert counts[0] == 0
    assert counts == sorted(counts)
    assert counts[-1] > counts[1]


points = st.tuples(*[st.floats(-0.02, 0.02, allow_nan=False)] * 3)
directions = st.tuples(*[st.floats(-1.0, 1.0, allow_nan=False)] * 3).filter(lambda v: np.linalg.norm(v) > 0.1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(points, directions), min_size=0, max_size=5), points, directions)
def test_adding_a_contact_never_frees_a_dof(base, point, normal):
    contacts = ContactSet(tuple(_contact(p, n) for p, n in base))
    more = ContactSet(contacts.contacts + (_contact(point, normal),))
    before = dof_signature(contacts, BASE_POSE, 0.018)
    after = dof_signature(more, BASE_POSE, 0.018)
    assert after.constrained_count >= before.constrained_count
    for dof in DOFS:
        if before[dof] != DofStatus.FREE:
            assert after[dof] != DofStatus.FREE
