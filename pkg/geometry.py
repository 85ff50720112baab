"""
Peg and hole geometry, signed distances and contact queries
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist
from shapely.geometry import Polygon

from errors import (AssumptionViolatedError, DeepPenetrationError, DegenerateError,
                    NegativeClearanceError, NonConvexError)
from models import Pose
from sim_config import DEFAULT_CONFIG, SimConfig


class Surface(Enum):
    TOP_PLANE = "top_plane"
    HOLE_WALL = "hole_wall"
    HOLE_BOTTOM = "hole_bottom"
    PUSHER = "pusher"


class Feature(Enum):
    VERTEX = "vertex"
    EDGE = "edge"
    FACE = "face"


SURFACES = list(Surface)
FEATURES = list(Feature)
_SURFACE_CODE = {s: i for i, s in enumerate(SURFACES)}
_FEATURE_CODE = {f: i for i, f in enumerate(FEATURES)}


@dataclass(frozen=True, eq=False)
class CrossSection:
    """Strictly convex polygon (CCW vertices) or circle, in its own 2-D frame"""
    vertices: Optional[np.ndarray] = None
    radius: Optional[float] = None

    @property
    def is_circle(self) -> bool:
        return self.radius is not None

    @property
    def edge_normals(self) -> np.ndarray:
        """Outward unit normals, one per edge i -> i+1"""
        edges = np.roll(self.vertices, -1, axis=0) - self.vertices
        normals = np.column_stack([edges[:, 1], -edges[:, 0]])
        return normals / np.linalg.norm(normals, axis=1, keepdims=True)

    @property
    def bounding_radius(self) -> float:
        if self.is_circle:
            return self.radius
        return float(np.linalg.norm(self.vertices, axis=1).max())

    @property
    def rotational_symmetry(self) -> int:
        """Order of the rotational symmetry about the origin; 0 for a circle"""
        if self.is_circle:
            return 0
        n = len(self.vertices)
        tol = 1e-6 * self.bounding_radius
        for order in range(n, 1, -1):
            if n % order:
                continue
            c, s = np.cos(2.0 * np.pi / order), np.sin(2.0 * np.pi / order)
            turned = self.vertices @ np.array([[c, s], [-s, c]])
            gaps = np.linalg.norm(turned[:, None, :] - self.vertices[None, :, :], axis=2).min(axis=1)
            if np.all(gaps <= tol):
                return order
        return 1

    @property
    def area(self) -> float:
        if self.is_circle:
            return float(np.pi * self.radius ** 2)
        return float(Polygon(self.vertices).area)

    def boundary_points(self, spacing: float, circle_samples: int) -> Tuple[np.ndarray, np.ndarray]:
        """Boundary samples and a per-sample is-vertex mask"""
        if self.is_circle:
            angles = np.linspace(0.0, 2.0 * np.pi, circle_samples, endpoint=False)
            points = self.radius * np.column_stack([np.cos(angles), np.sin(angles)])
            return points, np.zeros(len(points), dtype=bool)
        points, is_vertex = [], []
        for start, end in zip(self.vertices, np.roll(self.vertices, -1, axis=0)):
            pieces = max(1, int(np.ceil(np.linalg.norm(end - start) / spacing)))
            for k in range(pieces):
                points.append(start + (end - start) * k / pieces)
                is_vertex.append(k == 0)
        return np.array(points), np.array(is_vertex)

    def sharp_vertex_mask(self, min_turn_deg: float) -> np.ndarray:
        """Vertices whose exterior turning angle is at least `min_turn_deg`"""
        if self.is_circle:
            return np.zeros(0, dtype=bool)
        incoming = self.vertices - np.roll(self.vertices, 1, axis=0)
        outgoing = np.roll(self.vertices, -1, axis=0) - self.vertices
        turn = np.arctan2(
            incoming[:, 0] * outgoing[:, 1] - incoming[:, 1] * outgoing[:, 0],
            np.einsum('ij,ij->i', incoming, outgoing),
        )
        return np.degrees(turn) >= min_turn_deg


def make_cross_section(points: Optional[Sequence[Sequence[float]]] = None,
                       radius: Optional[float] = None) -> CrossSection:
    """Validate, orient CCW and recentre a polygon, or build a circle"""
    if radius is not None:
        if points is not None:
            raise ValueError("give either points or radius, not both")
        if not radius > 0:
            raise DegenerateError(f"circle radius must be positive, got {radius}")
        return CrossSection(radius=float(radius))
    if points is None:
        raise DegenerateError("no points given")
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise DegenerateError(f"need at least 3 planar points, got shape {pts.shape}")
    polygon = Polygon(pts)
    scale = float(np.ptp(pts, axis=0).max())
    if scale <= 0 or polygon.area <= 1e-9 * scale ** 2:
        raise DegenerateError("points are collinear")
    if not polygon.exterior.is_ccw:
        pts = pts[::-1]
    _check_strictly_convex(pts, scale)
    centroid = np.array(polygon.centroid.coords[0])
    return CrossSection(vertices=pts - centroid)


def _check_strictly_convex(pts: np.ndarray, scale: float):
    edges = np.roll(pts, -1, axis=0) - pts
    if np.any(np.linalg.norm(edges, axis=1) <= 1e-9 * scale):
        raise DegenerateError("repeated vertex")
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    if np.any(cross <= 1e-12 * scale ** 2):
        raise NonConvexError(f"non-positive turn at vertex {int(np.argmin(cross)) + 1}")
    turning = np.arctan2(cross, np.einsum('ij,ij->i', edges, nxt)).sum()
    if not np.isclose(turning, 2.0 * np.pi, atol=1e-6):
        raise NonConvexError("polygon winds more than once")


def _drop_collinear(pts: np.ndarray, scale: float) -> np.ndarray:
    keep = []
    for i in range(len(pts)):
        prev, cur, nxt = pts[i - 1], pts[i], pts[(i + 1) % len(pts)]
        a, b = cur - prev, nxt - cur
        if abs(a[0] * b[1] - a[1] * b[0]) > 1e-10 * scale ** 2:
            keep.append(cur)
    return np.array(keep)


def convex_hull_section(points: Sequence[Sequence[float]]) -> CrossSection:
    """Convex approximation of a near-convex outline"""
    pts = np.asarray(points, dtype=float)
    hull = ConvexHull(pts)
    # 2-D hulls list vertices counterclockwise
    return make_cross_section(pts[hull.vertices])


def dilate_section(section: CrossSection, clearance: float) -> CrossSection:
    """Grow a section by clearance/2 on every side (hole = dilated peg)"""
    if clearance < 0:
        raise NegativeClearanceError(f"clearance {clearance} < 0")
    if clearance == 0:
        return section
    if section.is_circle:
        return CrossSection(radius=section.radius + clearance / 2.0)
    grown = Polygon(section.vertices).buffer(clearance / 2.0, quad_segs=4)
    pts = np.array(grown.exterior.coords[:-1])
    scale = float(np.ptp(pts, axis=0).max())
    pts = _drop_collinear(pts, scale)
    if not Polygon(pts).exterior.is_ccw:
        pts = pts[::-1]
    _check_strictly_convex(pts, scale)
    # keeps the parent's frame so an aligned peg sits centred in the hole
    return CrossSection(vertices=pts)


def section_distance(section: CrossSection, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Exact signed distance, outward unit gradient and nearest-vertex index
    (-1 unless the point is outside and closest to a vertex).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if section.is_circle:
        r = np.linalg.norm(pts, axis=1)
        normals = np.tile([1.0, 0.0], (len(pts), 1))
        nonzero = r > 1e-15
        normals[nonzero] = pts[nonzero] / r[nonzero, None]
        return r - section.radius, normals, np.full(len(pts), -1)

    verts = section.vertices
    edges = np.roll(verts, -1, axis=0) - verts
    normals = section.edge_normals
    offsets = np.einsum('ij,ij->i', normals, verts)
    plane = pts @ normals.T - offsets
    inside_edge = np.argmax(plane, axis=1)
    inside_val = plane[np.arange(len(pts)), inside_edge]

    rel = pts[:, None, :] - verts[None, :, :]
    t = np.clip(np.einsum('mnk,nk->mn', rel, edges) / np.einsum('nk,nk->n', edges, edges), 0.0, 1.0)
    closest = verts[None, :, :] + t[..., None] * edges[None, :, :]
    dist = np.linalg.norm(pts[:, None, :] - closest, axis=2)
    nearest = np.argmin(dist, axis=1)
    rows = np.arange(len(pts))
    out_dist = dist[rows, nearest]

    inside = inside_val <= 0.0
    sd = np.where(inside, inside_val, out_dist)
    grad = normals[inside_edge].copy()
    outside = ~inside & (out_dist > 1e-15)
    grad[outside] = (pts[outside] - closest[rows[outside], nearest[outside]]) / out_dist[outside, None]

    t_near = t[rows, nearest]
    vertex = np.full(len(pts), -1)
    at_start = ~inside & (t_near <= 0.0)
    at_end = ~inside & (t_near >= 1.0)
    vertex[at_start] = nearest[at_start]
    vertex[at_end] = (nearest[at_end] + 1) % len(verts)
    return sd, grad, vertex


def signed_distance(section: CrossSection, point):
    """Signed distance to the section boundary, negative inside"""
    sd, _, _ = section_distance(section, point)
    return float(sd[0]) if np.ndim(point) == 1 else sd


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray
    features: np.ndarray
    bottom: np.ndarray


@dataclass(frozen=True, eq=False)
class Peg:
    """Prism of `section` and `length`; origin at the top-face centroid, bottom face at z = -length"""
    section: CrossSection
    length: float
    _cache: Dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.length > 0:
            raise DegenerateError(f"peg length must be positive, got {self.length}")

    @property
    def is_axisymmetric(self) -> bool:
        return self.section.is_circle

    def bottom_points(self, config: SimConfig = DEFAULT_CONFIG) -> np.ndarray:
        """Bottom-face boundary samples in the peg frame"""
        samples = self.samples(config)
        return samples.points[samples.bottom]

    def samples(self, config: SimConfig = DEFAULT_CONFIG) -> SampleSet:
        """Material samples: bottom boundary plus vertical corner edges"""
        key = (config.SAMPLE_SPACING, config.CIRCLE_SAMPLES, config.CORNER_TURN_MIN)
        if key not in self._cache:
            self._cache[key] = self._build_samples(config)
        return self._cache[key]

    def _build_samples(self, config: SimConfig) -> SampleSet:
        ring, is_vertex = self.section.boundary_points(config.SAMPLE_SPACING, config.CIRCLE_SAMPLES)
        points = [np.column_stack([ring, np.full(len(ring), -self.length)])]
        features = [np.where(is_vertex, _FEATURE_CODE[Feature.VERTEX], _FEATURE_CODE[Feature.EDGE])]
        if not self.section.is_circle:
            corners = self.section.vertices[self.section.sharp_vertex_mask(config.CORNER_TURN_MIN)]
            heights = np.arange(-self.length + config.SAMPLE_SPACING, 1e-12, config.SAMPLE_SPACING)
            if len(corners) and len(heights):
                grid = np.array([[cx, cy, z] for cx, cy in corners for z in heights])
                points.append(grid)
                features.append(np.full(len(grid), _FEATURE_CODE[Feature.EDGE]))
        features = np.concatenate(features)
        bottom = np.arange(len(features)) < len(ring)
        return SampleSet(np.vstack(points), features, bottom)

    def lowest_bottom_point(self, pose: Pose, config: SimConfig = DEFAULT_CONFIG) -> np.ndarray:
        world = pose.apply(self.bottom_points(config))
        return world[np.argmin(world[:, 2])]


@dataclass(frozen=True, eq=False)
class HoleBoard:
    """Horizontal plane at `plane_height` with an optional prismatic hole"""
    hole_section: Optional[CrossSection]
    hole_position: np.ndarray = field(default_factory=lambda: np.zeros(2))
    hole_yaw: float = 0.0
    plane_height: float = 0.0
    hole_depth: float = 0.02
    friction: float = DEFAULT_CONFIG.DEFAULT_FRICTION
    _cache: Dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "hole_position", np.asarray(self.hole_position, dtype=float).reshape(2))
        if not self.hole_depth > 0:
            raise DegenerateError(f"hole depth must be positive, got {self.hole_depth}")
        if not 0.0 <= self.friction <= DEFAULT_CONFIG.MAX_FRICTION:
            raise AssumptionViolatedError("low contact friction", f"mu = {self.friction}")

    @property
    def has_hole(self) -> bool:
        return self.hole_section is not None

    @property
    def bottom_height(self) -> float:
        return self.plane_height - self.hole_depth

    def _rotation_2d(self) -> np.ndarray:
        c, s = np.cos(self.hole_yaw), np.sin(self.hole_yaw)
        return np.array([[c, -s], [s, c]])

    def to_hole_frame(self, xy: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(xy) - self.hole_position) @ self._rotation_2d()

    def direction_to_world(self, vectors: np.ndarray) -> np.ndarray:
        return np.atleast_2d(vectors) @ self._rotation_2d().T

    def contains_xy(self, xy: np.ndarray) -> np.ndarray:
        if not self.has_hole:
            return np.zeros(len(np.atleast_2d(xy)), dtype=bool)
        sd, _, _ = section_distance(self.hole_section, self.to_hole_frame(xy))
        return sd < 0.0

    def rim_samples(self, config: SimConfig = DEFAULT_CONFIG) -> SampleSet:
        """Hole rim at plane height, world frame"""
        key = (config.SAMPLE_SPACING, config.CIRCLE_SAMPLES)
        if key not in self._cache:
            ring, is_vertex = self.hole_section.boundary_points(config.SAMPLE_SPACING, config.CIRCLE_SAMPLES)
            xy = ring @ self._rotation_2d().T + self.hole_position
            points = np.column_stack([xy, np.full(len(xy), self.plane_height)])
            features = np.where(is_vertex, _FEATURE_CODE[Feature.VERTEX], _FEATURE_CODE[Feature.EDGE])
            self._cache[key] = SampleSet(points, features, np.ones(len(points), dtype=bool))
        return self._cache[key]


@dataclass(frozen=True, eq=False)
class Contact:
    point: np.ndarray
    normal: np.ndarray
    surface: Surface
    feature: Feature
    gap: float = 0.0


@dataclass(frozen=True)
class ContactSet:
    contacts: Tuple[Contact, ...] = ()

    def __len__(self) -> int:
        return len(self.contacts)

    def __iter__(self) -> Iterator[Contact]:
        return iter(self.contacts)

    def __getitem__(self, index: int) -> Contact:
        return self.contacts[index]

    @property
    def points(self) -> np.ndarray:
        return np.array([c.point for c in self.contacts]).reshape(-1, 3)

    @property
    def normals(self) -> np.ndarray:
        return np.array([c.normal for c in self.contacts]).reshape(-1, 3)

    @property
    def gaps(self) -> np.ndarray:
        return np.array([c.gap for c in self.contacts])

    def on_surface(self, *surfaces: Surface) -> "ContactSet":
        return ContactSet(tuple(c for c in self.contacts if c.surface in surfaces))


@dataclass(frozen=True)
class ContactCandidates:
    """Unclustered per-sample constraints, in a fixed sample order"""
    points: np.ndarray
    normals: np.ndarray
    gaps: np.ndarray
    surfaces: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return len(self.gaps)

    def select(self, mask: np.ndarray) -> "ContactCandidates":
        return ContactCandidates(self.points[mask], self.normals[mask], self.gaps[mask],
                                 self.surfaces[mask], self.features[mask])

    @classmethod
    def concatenate(cls, parts: List["ContactCandidates"]) -> "ContactCandidates":
        if not parts:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros(0, int), np.zeros(0, int))
        return cls(*(np.concatenate([getattr(p, name) for p in parts])
                     for name in ("points", "normals", "gaps", "surfaces", "features")))


def _rows(points, normals, gaps, surface, features) -> ContactCandidates:
    n = len(gaps)
    if np.ndim(normals) == 1:
        normals = np.tile(normals, (n, 1))
    return ContactCandidates(np.asarray(points).reshape(-1, 3), np.asarray(normals, dtype=float).reshape(-1, 3),
                             np.asarray(gaps, dtype=float), np.full(n, _SURFACE_CODE[surface]),
                             np.asarray(features).reshape(-1))


def contact_candidates(peg: Peg, pose: Pose, board: Optional[HoleBoard],
                       planes: Sequence[Tuple[np.ndarray, np.ndarray]] = (),
                       config: SimConfig = DEFAULT_CONFIG, reach: Optional[float] = None) -> ContactCandidates:
    """
    Every sample-level constraint. Normals point from the environment into
    the peg; gap < 0 means penetration. With `reach`, board and rim rows that
    are certainly farther than `reach` are skipped.
    """
    samples = peg.samples(config)
    world = pose.apply(samples.points)
    up = np.array([0.0, 0.0, 1.0])
    parts: List[ContactCandidates] = []

    for point, normal in planes:
        normal = np.asarray(normal, dtype=float)
        parts.append(_rows(world, normal, (world - point) @ normal, Surface.PUSHER, samples.features))

    if board is None:
        return ContactCandidates.concatenate(parts)

    z = world[:, 2]
    z0 = board.plane_height
    if reach is not None and z.min() - z0 > reach:
        return ContactCandidates.concatenate(parts)
    if not board.has_hole:
        parts.append(_rows(world, up, z - z0, Surface.TOP_PLANE, samples.features))
        return ContactCandidates.concatenate(parts)

    # peg samples against the board solid
    sd, grad, _ = section_distance(board.hole_section, board.to_hole_frame(world[:, :2]))
    wall_normal = np.column_stack([-board.direction_to_world(grad), np.zeros(len(sd))])
    inside = sd < 0.0
    below = z < z0
    plane_depth = z0 - z
    on_plane = ~inside & (~below | (plane_depth <= sd))
    into_wall = (~inside & below & ~on_plane) | (inside & below)
    parts.append(_rows(world[on_plane], up, z[on_plane] - z0, Surface.TOP_PLANE, samples.features[on_plane]))
    parts.append(_rows(world[inside], up, z[inside] - board.bottom_height, Surface.HOLE_BOTTOM,
                       samples.features[inside]))
    parts.append(_rows(world[into_wall], wall_normal[into_wall], -sd[into_wall], Surface.HOLE_WALL,
                       samples.features[into_wall]))

    # hole rim against the peg prism
    rim = board.rim_samples(config)
    rim_points, rim_features = rim.points, rim.features
    local = pose.apply_inverse(rim_points)
    if reach is not None:
        # outside the prism's bounding cylinder the gap is at least the radial excess
        close = np.hypot(local[:, 0], local[:, 1]) <= peg.section.bounding_radius + reach
        rim_points, rim_features, local = rim_points[close], rim_features[close], local[close]
    sd_p, grad_p, vertex = section_distance(peg.section, local[:, :2])
    height = local[:, 2] + peg.length
    axis = np.tile(pose.axis, (len(rim_points), 1))
    lateral = pose.rotation.apply(np.column_stack([-grad_p, np.zeros(len(sd_p))]))
    if peg.section.is_circle:
        sharp = np.zeros(len(sd_p), dtype=bool)
    else:
        sharp_mask = peg.section.sharp_vertex_mask(config.CORNER_TURN_MIN)
        sharp = (vertex >= 0) & sharp_mask[np.maximum(vertex, 0)]

    under_face = height < 0.0
    alongside = (height >= 0.0) & (local[:, 2] <= 0.0)
    use_axis = (under_face & ((sd_p < 0.0) | (-height >= sd_p))) | (alongside & (sd_p < 0.0) & (height < -sd_p))
    use_lateral = (under_face & ~use_axis) | (alongside & ~use_axis & ~((sd_p >= 0.0) & sharp))
    rim_gap = np.where(under_face, np.where(sd_p < 0.0, -height, np.maximum(sd_p, -height)),
                       np.where(sd_p < 0.0, np.where(use_axis, -height, sd_p), sd_p))
    normals = np.where(use_axis[:, None], axis, lateral)
    keep = use_axis | use_lateral
    parts.append(_rows(rim_points[keep], normals[keep], rim_gap[keep], Surface.HOLE_WALL, rim_features[keep]))
    return ContactCandidates.concatenate(parts)


def cluster_contacts(candidates: ContactCandidates, config: SimConfig = DEFAULT_CONFIG) -> ContactSet:
    """Merge sample constraints into vertex/edge/face contact representatives"""
    n = len(candidates)
    if n == 0:
        return ContactSet(())
    if n == 1:
        labels = np.array([1])
    else:
        distance = pdist(candidates.points)
        cos_limit = np.cos(np.radians(config.CLUSTER_NORMAL_ANGLE))
        different_normal = pdist(candidates.normals, 'cosine') > 1.0 - cos_limit
        different_surface = pdist(candidates.surfaces[:, None], 'hamming')
        distance = np.where(different_normal | (different_surface > 0), 1e3, distance)
        labels = fcluster(linkage(distance, method='single'), t=config.CLUSTER_RADIUS, criterion='distance')

    contacts: List[Contact] = []
    for label in np.unique(labels):
        idx = np.flatnonzero(labels == label)
        contacts.extend(_representatives(candidates, idx, config))
    return ContactSet(tuple(contacts))


def _representatives(candidates: ContactCandidates, idx: np.ndarray, config: SimConfig) -> List[Contact]:
    pts = candidates.points[idx]
    deepest = int(np.argmin(candidates.gaps[idx]))
    radius = config.CLUSTER_RADIUS
    surface = SURFACES[candidates.surfaces[idx[0]]]

    def contact(local_index: int, feature: Feature) -> Contact:
        j = idx[local_index]
        return Contact(candidates.points[j].copy(), candidates.normals[j].copy(), surface, feature,
                       float(candidates.gaps[j]))

    extent = float(pdist(pts).max()) if len(pts) > 1 else 0.0
    if extent <= radius:
        sample_feature = FEATURES[candidates.features[idx[deepest]]]
        feature = Feature.VERTEX if sample_feature == Feature.VERTEX else Feature.EDGE
        return [contact(deepest, feature)]

    centred = pts - pts.mean(axis=0)
    _, _, axes = np.linalg.svd(centred, full_matrices=False)
    projected = centred @ axes[:2].T
    if np.ptp(projected[:, 1]) <= radius:
        chosen = [int(np.argmin(projected[:, 0])), int(np.argmax(projected[:, 0]))]
        feature = Feature.EDGE
    else:
        try:
            chosen = [int(v) for v in ConvexHull(projected).vertices]
        except Exception as e:
            logging.debug(f"Patch hull failed, using extremes: {e}")
            chosen = [int(np.argmin(projected[:, 0])), int(np.argmax(projected[:, 0]))]
        feature = Feature.FACE
        if len(chosen) > config.MAX_PATCH_REPRESENTATIVES:
            chosen = _farthest_points(pts, chosen, config.MAX_PATCH_REPRESENTATIVES)
    chosen.append(deepest)

    kept: List[int] = []
    for i in chosen:
        if all(np.linalg.norm(pts[i] - pts[k]) > radius for k in kept):
            kept.append(i)
    return [contact(i, feature) for i in kept]


def _farthest_points(pts: np.ndarray, pool: List[int], count: int) -> List[int]:
    chosen = [pool[0]]
    while len(chosen) < count:
        dist = np.min(np.linalg.norm(pts[pool][:, None, :] - pts[chosen][None, :, :], axis=2), axis=1)
        chosen.append(pool[int(np.argmax(dist))])
    return chosen


def query_contacts(peg: Peg, object_pose: Pose, board: Optional[HoleBoard], tol: float,
                   planes: Sequence[Tuple[np.ndarray, np.ndarray]] = (),
                   config: SimConfig = DEFAULT_CONFIG) -> ContactSet:
    """Contacts whose separation is at most `tol`"""
    return contacts_within(contact_candidates(peg, object_pose, board, planes, config, reach=tol), tol, config)


def contacts_within(candidates: ContactCandidates, tol: float, config: SimConfig = DEFAULT_CONFIG) -> ContactSet:
    """Cluster the candidates with gap <= tol, refusing overlaps far beyond the tolerances"""
    if len(candidates) and candidates.gaps.min() < -10.0 * max(tol, config.TOL_PEN):
        raise DeepPenetrationError(f"penetration {-candidates.gaps.min() * 1e3:.3f} mm")
    return cluster_contacts(candidates.select(candidates.gaps <= tol), config)


def engaged_depth(peg: Peg, pose: Pose, board: Optional[HoleBoard], config: SimConfig = DEFAULT_CONFIG) -> float:
    """How far the bottom-face centre sits below the plane, inside the hole"""
    if board is None or not board.has_hole:
        return 0.0
    centre = pose.apply(np.array([0.0, 0.0, -peg.length]))
    if not board.contains_xy(centre[:2])[0]:
        return 0.0
    return max(0.0, board.plane_height - float(centre[2]))
