from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.spatial.transform import Rotation
from shapely.geometry import Point, Polygon

from conftest import MM, rectangle_section
from errors import AssumptionViolatedError, DeepPenetrationError, DegenerateError, NegativeClearanceError, NonConvexError
from geometry import (FEATURES, SURFACES, ContactCandidates, Feature, HoleBoard, Peg, Surface, cluster_contacts,
                      contact_candidates, convex_hull_section, dilate_section, engaged_depth, make_cross_section,
                      query_contacts, section_distance, signed_distance)
from models import Pose
from sim_config import DEFAULT_CONFIG

coords = st.floats(min_value=-0.05, max_value=0.05, allow_nan=False)


def test_make_cross_section_orients_and_recentres_a_clockwise_square():
    section = make_cross_section([[0, 0], [0, 2], [2, 2], [2, 0]])
    assert Polygon(section.vertices).exterior.is_ccw
    assert_allclose(section.vertices.mean(axis=0), [0.0, 0.0], atol=1e-12)
    assert section.area == pytest.approx(4.0)


def test_make_cross_section_rejects_collinear_points():
    with pytest.raises(DegenerateError):
        make_cross_section([[0, 0], [1, 1], [2, 2]])


def test_make_cross_section_rejects_reflex_vertex():
    with pytest.raises(NonConvexError):
        make_cross_section([[0, 0], [2, 0], [1, 0.5], [2, 2], [0, 2]])


def test_make_cross_section_rejects_collinear_middle_vertex():
    with pytest.raises(NonConvexError):
        make_cross_section([[0, 0], [1, 0], [2, 0], [2, 2], [0, 2]])


def test_circle_needs_positive_radius():
    with pytest.raises(DegenerateError):
        make_cross_section(radius=0.0)


def test_convex_hull_section_of_two_circles_is_convex():
    angles = np.linspace(0, 2 * np.pi, 48, endpoint=False)
    pts = [(cx + r * np.cos(a), cy + r * np.sin(a)) for cx, cy, r in [(0, -4, 11), (0, 9, 7)] for a in angles]
    section = convex_hull_section(np.array(pts) * MM)
    assert not section.is_circle
    assert section.area > np.pi * (11 * MM) ** 2


def test_dilate_circle_adds_half_the_clearance():
    hole = dilate_section(make_cross_section(radius=10 * MM), 0.25 * MM)
    assert hole.radius == pytest.approx(10.125 * MM)


def test_dilate_by_zero_returns_the_same_section():
    section = rectangle_section()
    assert dilate_section(section, 0.0) is section


def test_dilate_rejects_negative_clearance():
    with pytest.raises(NegativeClearanceError):
        dilate_section(rectangle_section(), -0.1 * MM)


def test_dilated_square_offsets_every_vertex_along_its_edge_normals():
    square = make_cross_section([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
    grown = dilate_section(square, 2 * MM)
    sd, _, _ = section_distance(grown, square.vertices)
    assert np.all(sd <= -0.9 * MM)
    normals = square.edge_normals
    for i, vertex in enumerate(square.vertices):
        for normal in (normals[i], normals[i - 1]):
            assert abs(signed_distance(grown, vertex + normal * 1 * MM)) < 1e-9


def test_dilated_polygon_keeps_the_parent_frame():
    section = rectangle_section()
    grown = dilate_section(section, 1 * MM)
    assert_allclose(grown.vertices.mean(axis=0), [0.0, 0.0], atol=1e-6)
    assert signed_distance(grown, np.array([0.0, 0.0])) == pytest.approx(-10.5 * MM)


def test_signed_distance_of_square_matches_known_values():
    square = make_cross_section([[-1, -1], [1, -1], [1, 1], [-1, 1]])
    assert signed_distance(square, np.array([0.0, 0.0])) == pytest.approx(-1.0)
    assert signed_distance(square, np.array([3.0, 0.0])) == pytest.approx(2.0)
    assert signed_distance(square, np.array([2.0, 2.0])) == pytest.approx(np.sqrt(2.0))


def test_section_distance_reports_nearest_vertex_only_outside_corners():
    square = make_cross_section([[-1, -1], [1, -1], [1, 1], [-1, 1]])
    _, grad, vertex = section_distance(square, np.array([[2.0, 2.0], [3.0, 0.0], [0.0, 0.0]]))
    assert vertex[0] >= 0 and vertex[1] == -1 and vertex[2] == -1
    assert_allclose(square.vertices[vertex[0]], [1.0, 1.0])
    assert_allclose(grad[0], [np.sqrt(0.5), np.sqrt(0.5)])


@settings(max_examples=200, deadline=None)
@given(coords, coords, coords, coords)
def test_signed_distance_is_one_lipschitz(x0, y0, x1, y1):
    section = rectangle_section()
    a, b = np.array([x0, y0]), np.array([x1, y1])
    assert abs(signed_distance(section, a) - signed_distance(section, b)) <= np.linalg.norm(a - b) + 1e-12


@settings(max_examples=200, deadline=None)
@given(coords, coords)
def test_signed_distance_sign_matches_containment(x, y):
    section = make_cross_section([[-0.02, -0.01], [0.015, -0.012], [0.02, 0.01], [-0.01, 0.015]])
    sd = signed_distance(section, np.array([x, y]))
    polygon = Polygon(section.vertices)
    if abs(sd) > 1e-12:
        assert (sd < 0) == polygon.contains(Point(x, y))
    assert abs(abs(sd) - polygon.exterior.distance(Point(x, y))) < 1e-9


def test_peg_samples_include_corner_edges_for_polygons_only(rectangle_peg, circle_peg):
    rect = rectangle_peg.samples()
    assert rect.bottom.sum() < len(rect.points)
    assert np.all(rect.points[~rect.bottom][:, 2] > -rectangle_peg.length)
    circle = circle_peg.samples()
    assert np.all(circle.bottom)
    assert len(circle.points) == DEFAULT_CONFIG.CIRCLE_SAMPLES


def test_peg_in_free_space_has_no_contacts(rectangle_peg, rectangle_board):
    pose = Pose([0.1, 0.1, 0.05])
    contacts = query_contacts(rectangle_peg, pose, rectangle_board, DEFAULT_CONFIG.CONTACT_TOL)
    assert len(contacts) == 0


def test_peg_resting_flat_on_plane_gives_a_face_contact(rectangle_peg, rectangle_board):
    pose = Pose([0.1, 0.0, rectangle_peg.length])
    contacts = query_contacts(rectangle_peg, pose, rectangle_board, DEFAULT_CONFIG.CONTACT_TOL)
    assert len(contacts) >= 3
    assert all(c.surface == Surface.TOP_PLANE for c in contacts)
    assert all(c.feature == Feature.FACE for c in contacts)
    assert_allclose(contacts.normals, np.tile([0.0, 0.0, 1.0], (len(contacts), 1)))


def test_tilted_peg_touches_plane_with_one_edge(rectangle_peg, blank_board):
    pose = Pose.from_rotvec([0.0, 0.0, 0.0], [0.0, np.radians(10.0), 0.0])
    lowest = rectangle_peg.lowest_bottom_point(pose)
    pose = pose.with_position([0.0, 0.0, -lowest[2]])
    contacts = query_contacts(rectangle_peg, pose, blank_board, DEFAULT_CONFIG.CONTACT_TOL)
    assert len(contacts) == 2
    assert all(c.feature == Feature.EDGE for c in contacts)
    assert np.ptp(contacts.points[:, 1]) == pytest.approx(20 * MM, abs=1e-6)


def test_centred_peg_in_hole_sees_walls_only_within_clearance(rectangle_peg, rectangle_board):
    pose = Pose([0.0, 0.0, rectangle_peg.length - 0.01])
    assert len(query_contacts(rectangle_peg, pose, rectangle_board, DEFAULT_CONFIG.CONTACT_TOL)) == 0
    near = query_contacts(rectangle_peg, pose, rectangle_board, 1 * MM)
    walls = near.on_surface(Surface.HOLE_WALL)
    assert len(walls) > 0
    assert np.all(np.abs(walls.normals[:, 2]) < 1e-9)
    assert np.all(walls.gaps > 0)


NORMAL_STEP = 1e-5


def _assert_moving_along_normals_opens_contacts(peg, pose, board):
    contacts = query_contacts(peg, pose, board, DEFAULT_CONFIG.CONTACT_TOL)
    assert len(contacts) > 0
    for contact in contacts:
        moved = pose.with_position(pose.position + NORMAL_STEP * contact.normal)
        candidates = contact_candidates(peg, moved, board)
        # rim rows stay put, peg sample rows travel with the peg
        distance = np.minimum(np.linalg.norm(candidates.points - contact.point, axis=1),
                              np.linalg.norm(candidates.points - (contact.point + NORMAL_STEP * contact.normal),
                                             axis=1))
        row = int(np.argmin(distance))
        assert distance[row] < 1e-9
        assert candidates.gaps[row] > contact.gap + 0.5 * NORMAL_STEP


def test_rectangle_wall_normals_open_the_contacts(rectangle_peg, rectangle_board):
    pose = Pose([0.12 * MM, 0.02 * MM, rectangle_peg.length - 0.01])
    walls = query_contacts(rectangle_peg, pose, rectangle_board, DEFAULT_CONFIG.CONTACT_TOL)
    assert all(c.surface == Surface.HOLE_WALL for c in walls)
    assert np.all(walls.normals[:, 0] < -0.9)
    assert_allclose(walls.normals[:, 2], 0.0, atol=1e-12)
    _assert_moving_along_normals_opens_contacts(rectangle_peg, pose, rectangle_board)


def test_circle_wall_normals_open_the_contacts(circle_peg, circle_board):
    pose = Pose([0.12 * MM, 0.0, circle_peg.length - 0.01])
    _assert_moving_along_normals_opens_contacts(circle_peg, pose, circle_board)


def test_plane_normals_open_an_edge_contact(rectangle_peg, blank_board):
    pose = Pose.from_rotvec([0.0, 0.0, 0.0], [0.0, np.radians(10.0), 0.0])
    pose = pose.with_position([0.0, 0.0, -rectangle_peg.lowest_bottom_point(pose)[2]])
    _assert_moving_along_normals_opens_contacts(rectangle_peg, pose, blank_board)


def test_tilted_square_dipped_into_its_hole_touches_at_three_points():
    # spacing that puts rim samples at (H, 0) and (-0.15625 mm, +-H) on a 20 mm straight edge
    config = replace(DEFAULT_CONFIG, SAMPLE_SPACING=0.157 * MM)
    half, rim = 10 * MM, 10.125 * MM
    peg = Peg(make_cross_section([[-half, -half], [half, -half], [half, half], [-half, half]]), 0.04)
    board = HoleBoard(dilate_section(peg.section, 0.25 * MM))
    # tilt at which the two bottom edges leaving the low corner cross the +-y rims at those samples
    tilt = np.arccos(1.0 / (1.0 + 0.15625 * MM / rim))
    rotation = Rotation.from_rotvec([0.0, tilt, 0.0]) * Rotation.from_rotvec([0.0, 0.0, np.pi / 4])
    # low corner placed so its vertical edge passes through the +x rim sample; 1 nm past it
    corner = np.array([rim - rim * np.sin(tilt) * np.tan(tilt) + 1e-9, 0.0, -rim * np.sin(tilt)])
    pose = Pose(corner - rotation.apply([half, -half, -peg.length]), rotation)
    assert np.degrees(pose.tilt) == pytest.approx(10.0, abs=0.05)

    contacts = query_contacts(peg, pose, board, 1e-6, config=config)
    assert len(contacts) == 3
    assert all(c.surface == Surface.HOLE_WALL for c in contacts)
    expected = np.array([[rim, 0.0, 0.0], [-0.15625 * MM, rim, 0.0], [-0.15625 * MM, -rim, 0.0]])
    points = contacts.points
    for point in expected:
        assert np.min(np.linalg.norm(points - point, axis=1)) < 1e-6

    lower = pose.with_position(pose.position - [0.0, 0.0, 1e-5])
    raised = pose.with_position(pose.position + [0.0, 0.0, 1e-5])
    assert contact_candidates(peg, lower, board, config=config).gaps.min() < 0.0
    assert contact_candidates(peg, raised, board, config=config).gaps.min() >= 0.0


def test_rotational_symmetry_orders(rectangle_peg, circle_peg):
    square = make_cross_section([[-1, -1], [1, -1], [1, 1], [-1, 1]])
    assert square.rotational_symmetry == 4
    assert rectangle_peg.section.rotational_symmetry == 2
    assert circle_peg.section.rotational_symmetry == 0
    assert make_cross_section([[0, 0], [2, 0], [0, 1]]).rotational_symmetry == 1


def test_deep_penetration_is_reported(rectangle_peg, blank_board):
    pose = Pose([0.0, 0.0, rectangle_peg.length - 2 * MM])
    with pytest.raises(DeepPenetrationError):
        query_contacts(rectangle_peg, pose, blank_board, DEFAULT_CONFIG.CONTACT_TOL)


def test_pusher_plane_rows_come_first(rectangle_peg):
    origin, normal = np.array([-15 * MM, 0.0, 0.0]), np.array([1.0, 0.0, 0.0])
    candidates = contact_candidates(rectangle_peg, Pose.identity(), None, [(origin, normal)])
    assert len(candidates) == len(rectangle_peg.samples().points)
    assert candidates.gaps.min() == pytest.approx(0.0, abs=1e-12)


def test_engaged_depth(rectangle_peg, rectangle_board):
    assert engaged_depth(rectangle_peg, Pose([0.0, 0.0, 0.03]), rectangle_board) == pytest.approx(0.01)
    assert engaged_depth(rectangle_peg, Pose([0.1, 0.0, 0.03]), rectangle_board) == 0.0
    assert engaged_depth(rectangle_peg, Pose([0.0, 0.0, 0.05]), rectangle_board) == 0.0
    assert engaged_depth(rectangle_peg, Pose([0.0, 0.0, 0.03]), None) == 0.0


def test_board_rejects_high_friction():
    with pytest.raises(AssumptionViolatedError):
        HoleBoard(None, friction=0.5)


def test_peg_rejects_nonpositive_length():
    with pytest.raises(DegenerateError):
        Peg(rectangle_section(), 0.0)


def test_clustering_representatives_again_returns_them_unchanged(rectangle_peg, rectangle_board):
    pose = Pose([0.12 * MM, 0.02 * MM, rectangle_peg.length - 0.01])
    contacts = query_contacts(rectangle_peg, pose, rectangle_board, DEFAULT_CONFIG.CONTACT_TOL)
    assert len(contacts) > 1
    again = cluster_contacts(ContactCandidates(
        contacts.points, contacts.normals, contacts.gaps,
        np.array([SURFACES.index(c.surface) for c in contacts]),
        np.array([FEATURES.index(c.feature) for c in contacts]),
    ))
    assert len(again) == len(contacts)
    first, second = np.lexsort(contacts.points.T), np.lexsort(again.points.T)
    assert_allclose(again.points[second], contacts.points[first])
    assert_allclose(again.normals[second], contacts.normals[first])
