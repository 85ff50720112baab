"""
Contact formations: twist feasibility, DOF signatures and CF labels
"""
import logging
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import List, Optional, Tuple

import numpy as np

from errors import UnclassifiableError
from geometry import Contact, ContactSet, HoleBoard, Peg, Surface, engaged_depth, query_contacts
from models import Pose
from sim_config import DEFAULT_CONFIG, SimConfig

DOFS = ("x", "y", "z", "rx", "ry", "rz")
_HORIZONTAL_NZ = 0.5
_FLUSH_ANGLE_DEG = 5.0
_FLUSH_MIN_LENGTH = 3e-3


class DofStatus(Enum):
    FREE = "free"
    UNILATERAL = "unilateral"
    BLOCKED = "blocked"


class CFLabel(IntEnum):
    CF0 = 0  # free space
    CF1 = 1  # on the top plane
    CF2 = 2  # edge dipped against one wall
    CF3 = 3  # wedged against two walls
    CF4 = 4  # rotationally aligned hinge
    CF5 = 5  # prismatic engagement


EXPECTED_PATH = (CFLabel.CF0, CFLabel.CF1, CFLabel.CF2, CFLabel.CF3, CFLabel.CF4, CFLabel.CF5)
EXPECTED_PATH_AXISYMMETRIC = tuple(label for label in EXPECTED_PATH if label != CFLabel.CF4)


@dataclass(frozen=True)
class DofSignature:
    status: Tuple[DofStatus, ...]
    oblique_free: bool = False

    def __getitem__(self, dof: str) -> DofStatus:
        return self.status[DOFS.index(dof)]

    def all_blocked(self, *dofs: str) -> bool:
        return all(self[d] == DofStatus.BLOCKED for d in dofs)

    @property
    def constrained_count(self) -> int:
        return sum(1 for s in self.status if s != DofStatus.FREE)

    @classmethod
    def free(cls) -> "DofSignature":
        return cls(tuple(DofStatus.FREE for _ in DOFS), oblique_free=True)


@dataclass(frozen=True)
class ClassifyContext:
    tilt: float
    engaged_depth: float = 0.0
    lateral_signature: Optional[DofSignature] = None
    axisymmetric: bool = False
    tilt_min: float = np.radians(DEFAULT_CONFIG.TILT_MIN_DEG)


@dataclass
class CFTrace:
    """CF labels recorded at controller step boundaries"""
    entries: List[Tuple[float, CFLabel, int]] = field(default_factory=list)

    def record(self, t: float, label: CFLabel, step: int):
        if self.entries and t <= self.entries[-1][0]:
            raise ValueError(f"trace timestamps must increase ({t} after {self.entries[-1][0]})")
        self.entries.append((t, label, step))

    @property
    def labels(self) -> List[CFLabel]:
        return [label for _, label, _ in self.entries]


@dataclass(frozen=True)
class PathReport:
    passed: bool
    path: Tuple[CFLabel, ...]
    violation_time: Optional[float] = None
    violation: Optional[str] = None


def _margins(contacts: ContactSet, pose: Pose, twists: np.ndarray, char_length: float) -> np.ndarray:
    """n . (v + w x r) per contact (rows) and twist (columns)"""
    normals = contacts.normals
    lever = np.cross(contacts.points - pose.position, normals)
    twists = np.atleast_2d(twists)
    return normals @ twists[:, :3].T + lever @ twists[:, 3:].T / char_length


def twist_feasible(contacts: ContactSet, pose: Pose, twist: np.ndarray, char_length: float,
                   eps: float = DEFAULT_CONFIG.EPS_FEAS) -> bool:
    """First-order test: no contact is driven into the environment"""
    if not len(contacts):
        return True
    return bool(np.all(_margins(contacts, pose, twist, char_length) >= -eps))


def twist_feasible_gap_aware(contacts: ContactSet, pose: Pose, twist: np.ndarray, char_length: float,
                             horizon: float = DEFAULT_CONFIG.FEAS_HORIZON,
                             eps: float = DEFAULT_CONFIG.EPS_FEAS) -> bool:
    """Like twist_feasible, but a contact with gap g tolerates approach rates up to g / horizon"""
    if not len(contacts):
        return True
    threshold = -np.maximum(eps, np.maximum(contacts.gaps, 0.0) / horizon)
    return bool(np.all(_margins(contacts, pose, twist, char_length) >= threshold[:, None]))


def _random_unit_twists(count: int, seed: int = 0) -> np.ndarray:
    samples = np.random.default_rng(seed).normal(size=(count, 6))
    return samples / np.linalg.norm(samples, axis=1, keepdims=True)


def dof_signature(contacts: ContactSet, pose: Pose, char_length: float, gap_aware: bool = False,
                  config: SimConfig = DEFAULT_CONFIG) -> DofSignature:
    """Free / Unilateral / Blocked per canonical axis, plus whether any random twist is feasible"""
    if not len(contacts):
        return DofSignature.free()
    canonical = np.vstack([np.eye(6), -np.eye(6)])
    twists = np.vstack([canonical, _random_unit_twists(config.RANDOM_TWISTS)])
    margins = _margins(contacts, pose, twists, char_length)
    if gap_aware:
        threshold = -np.maximum(config.EPS_FEAS, np.maximum(contacts.gaps, 0.0) / config.FEAS_HORIZON)[:, None]
    else:
        threshold = -config.EPS_FEAS
    feasible = np.all(margins >= threshold, axis=0)

    status = []
    for i in range(6):
        plus, minus = feasible[i], feasible[6 + i]
        if plus and minus:
            status.append(DofStatus.FREE)
        elif plus or minus:
            status.append(DofStatus.UNILATERAL)
        else:
            status.append(DofStatus.BLOCKED)
    return DofSignature(tuple(status), oblique_free=bool(np.any(feasible[12:])))


def _horizontal_groups(contacts: ContactSet, angle_deg: float) -> List[List[int]]:
    """Indices of horizontal-normal contacts grouped by normal direction"""
    groups: List[List[int]] = []
    headings: List[np.ndarray] = []
    cos_limit = np.cos(np.radians(angle_deg))
    for i, contact in enumerate(contacts):
        if abs(contact.normal[2]) >= _HORIZONTAL_NZ:
            continue
        heading = contact.normal[:2] / np.linalg.norm(contact.normal[:2])
        for group, ref in zip(groups, headings):
            if heading @ ref >= cos_limit:
                group.append(i)
                break
        else:
            groups.append([i])
            headings.append(heading)
    return groups


def wall_directions(walls: ContactSet) -> int:
    return len(_horizontal_groups(walls, DEFAULT_CONFIG.CLUSTER_NORMAL_ANGLE))


def has_flush_contact(walls: ContactSet) -> bool:
    """A peg face lying along a rim edge: parallel horizontal normals spread along a line"""
    for group in _horizontal_groups(walls, _FLUSH_ANGLE_DEG):
        if len(group) < 2:
            continue
        pts = walls.points[group]
        if np.max(np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)) >= _FLUSH_MIN_LENGTH:
            return True
    return False


def distinct_contacts(contacts: ContactSet, config: SimConfig = DEFAULT_CONFIG) -> ContactSet:
    """
    Drop contacts that repeat an earlier one: same surface, normal within the
    clustering angle and point within the clustering radius.
    """
    cos_limit = np.cos(np.radians(config.CLUSTER_NORMAL_ANGLE))
    kept: List[Contact] = []
    for contact in contacts:
        if not any(other.surface == contact.surface and other.normal @ contact.normal >= cos_limit
                   and np.linalg.norm(other.point - contact.point) <= config.CLUSTER_RADIUS
                   for other in kept):
            kept.append(contact)
    return ContactSet(tuple(kept))


def classify_cf(contacts: ContactSet, signature: DofSignature, context: ClassifyContext) -> CFLabel:
    """Map a contact pattern to a CF label; higher labels win ties"""
    if not len(contacts):
        return CFLabel.CF0
    contacts = distinct_contacts(contacts)
    walls = contacts.on_surface(Surface.HOLE_WALL)
    tilted = context.tilt > context.tilt_min

    if not tilted and context.engaged_depth > 0 and context.lateral_signature is not None:
        required = ("x", "y", "rx", "ry") if context.axisymmetric else ("x", "y", "rx", "ry", "rz")
        if context.lateral_signature.all_blocked(*required):
            return CFLabel.CF5
    if len(walls) and tilted:
        if signature["rz"] == DofStatus.BLOCKED and has_flush_contact(walls):
            return CFLabel.CF4
        if len(contacts) >= 4 or wall_directions(walls) >= 2:
            return CFLabel.CF3
        if len(contacts) >= 2:
            return CFLabel.CF2
    if all(c.surface == Surface.TOP_PLANE for c in contacts):
        return CFLabel.CF1
    raise UnclassifiableError(
        f"{len(contacts)} contacts ({len(walls)} on walls), tilt {np.degrees(context.tilt):.1f} deg, "
        f"depth {context.engaged_depth * 1e3:.2f} mm"
    )


def classify_state(peg: Peg, pose: Pose, board: Optional[HoleBoard], clearance: float,
                   contacts: Optional[ContactSet] = None, config: SimConfig = DEFAULT_CONFIG) -> CFLabel:
    """Ground-truth CF label of a simulated configuration"""
    char_length = peg.section.bounding_radius
    if contacts is None:
        contacts = query_contacts(peg, pose, board, config.CONTACT_TOL, config=config)
    depth = engaged_depth(peg, pose, board, config)
    lateral = None
    if depth > 0:
        near = query_contacts(peg, pose, board, config.clearance_block(clearance), config=config)
        lateral = dof_signature(near, pose, char_length, gap_aware=True, config=config)
    context = ClassifyContext(tilt=pose.tilt, engaged_depth=depth, lateral_signature=lateral,
                              axisymmetric=peg.is_axisymmetric, tilt_min=np.radians(config.TILT_MIN_DEG))
    return classify_cf(contacts, dof_signature(contacts, pose, char_length, config=config), context)


def check_path(trace: CFTrace, axisymmetric: bool = False) -> PathReport:
    """Compare the de-duplicated label sequence against the nominal path"""
    expected = EXPECTED_PATH_AXISYMMETRIC if axisymmetric else EXPECTED_PATH
    path: List[CFLabel] = []
    times: List[float] = []
    for t, label, _ in trace.entries:
        if not path or path[-1] != label:
            path.append(label)
            times.append(t)
    for i, label in enumerate(path):
        if i >= len(expected) or label != expected[i]:
            want = expected[i].name if i < len(expected) else "end of path"
            logging.warning(f"CF path violation at t={times[i]:.2f}s: got {label.name}, expected {want}")
            return PathReport(False, tuple(path), times[i], f"got {label.name}, expected {want}")
    if len(path) < len(expected):
        last = times[-1] if times else 0.0
        return PathReport(False, tuple(path), last, f"path stopped at {path[-1].name if path else 'nothing'}")
    return PathReport(True, tuple(path))
