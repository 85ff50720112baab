"""
Compliant grasp model and quasi-static contact simulation
"""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import nnls
from scipy.spatial.transform import Rotation

from errors import SolverDivergedError
from geometry import (ContactCandidates, ContactSet, HoleBoard, Peg, Surface, cluster_contacts,
                      contact_candidates, contacts_within, engaged_depth, make_cross_section)
from models import Pose, Wrench
from sim_config import DEFAULT_CONFIG, SimConfig

AXES = ("x", "y", "z", "rx", "ry", "rz")
_MAX_RELINEARIZATIONS = 6


@dataclass(frozen=True, eq=False)
class GraspModel:
    """Per-axis grasp stiffness and slip plateaus (hand frame: x, y, z, rx, ry, rz)"""
    stiffness: np.ndarray = field(default_factory=lambda: np.array([700.0, 700.0, 1600.0, 4.0, 4.0, 5.0]))
    plateau: np.ndarray = field(default_factory=lambda: np.array([1.5, 1.5, 4.0, 0.3, 0.3, 0.2]))
    inhand_range: float = np.radians(20.0)
    inhand_rate: float = np.radians(10.0)

    def __post_init__(self):
        object.__setattr__(self, "stiffness", np.asarray(self.stiffness, dtype=float).reshape(6))
        object.__setattr__(self, "plateau", np.asarray(self.plateau, dtype=float).reshape(6))
        if np.any(self.stiffness <= 0) or np.any(self.plateau <= 0):
            raise ValueError("grasp stiffness and plateaus must be positive")

    @property
    def compliance(self) -> np.ndarray:
        return 1.0 / self.stiffness

    @property
    def offset_limit(self) -> np.ndarray:
        """Elastic offset at which each axis starts slipping"""
        return self.plateau / self.stiffness


@dataclass(frozen=True, eq=False)
class GraspOffset:
    """Elastic displacement of the object from its grasp rest pose, hand frame"""
    values: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).reshape(6))

    @property
    def translation(self) -> np.ndarray:
        return self.values[:3]

    @property
    def rotation(self) -> np.ndarray:
        return self.values[3:]


@dataclass(frozen=True, eq=False)
class HandCommand:
    """World-frame hand twist plus the in-hand tilt set-point"""
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))
    inhand_tilt: Optional[np.ndarray] = None
    release: bool = False

    def __post_init__(self):
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float).reshape(3))
        object.__setattr__(self, "angular", np.asarray(self.angular, dtype=float).reshape(3))
        if self.inhand_tilt is not None:
            object.__setattr__(self, "inhand_tilt", np.asarray(self.inhand_tilt, dtype=float).reshape(2))

    @classmethod
    def hold(cls) -> "HandCommand":
        return cls()

    @property
    def is_still(self) -> bool:
        return not (np.any(self.linear) or np.any(self.angular))


@dataclass(frozen=True, eq=False)
class Pusher:
    """Unilateral plane moving along its own normal"""
    origin: np.ndarray
    normal: np.ndarray
    speed: float

    def plane_at(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        normal = np.asarray(self.normal, dtype=float)
        return np.asarray(self.origin, dtype=float) + normal * self.speed * t, normal


@dataclass(frozen=True, eq=False)
class PhysicsScene:
    peg: Peg
    board: Optional[HoleBoard]
    grasp: GraspModel = field(default_factory=GraspModel)
    axial_resistance: float = 0.0
    pushers: Tuple[Pusher, ...] = ()
    config: SimConfig = DEFAULT_CONFIG

    @property
    def friction(self) -> float:
        return self.board.friction if self.board is not None else 0.0

    def planes_at(self, t: float) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [p.plane_at(t) for p in self.pushers]


@dataclass(frozen=True)
class SensorNoise:
    force: float = 0.05
    torque: float = 0.005


@dataclass(frozen=True, eq=False)
class SimState:
    t: float
    hand_pose: Pose
    grasp_nominal: Pose
    offset: GraspOffset
    rng: np.random.Generator
    inhand_tilt: np.ndarray = field(default_factory=lambda: np.zeros(2))
    slip: np.ndarray = field(default_factory=lambda: np.zeros(6))
    contacts: ContactSet = field(default_factory=ContactSet)
    released_object: Optional[Pose] = None
    solver_iterations: int = 0

    @property
    def released(self) -> bool:
        return self.released_object is not None

    @property
    def object_pose(self) -> Pose:
        if self.released_object is not None:
            return self.released_object
        return object_pose_for(self.hand_pose, self.grasp_nominal, self.offset.values)

    def grasp_wrench(self, grasp: GraspModel) -> Wrench:
        if self.released:
            return Wrench.zero()
        return grasp_wrench(self.offset, grasp)


def initial_state(hand_pose: Pose, seed_or_rng, inhand_tilt: Sequence[float] = (0.0, 0.0)) -> SimState:
    """Object held at its rest pose under the hand, nothing touching"""
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    tilt = np.asarray(inhand_tilt, dtype=float)
    nominal = Pose(np.zeros(3), Rotation.from_rotvec([tilt[0], tilt[1], 0.0]))
    return SimState(t=0.0, hand_pose=hand_pose, grasp_nominal=nominal, offset=GraspOffset(), rng=rng,
                    inhand_tilt=tilt)


def object_pose_for(hand: Pose, nominal: Pose, x: np.ndarray) -> Pose:
    """object = hand * (t_nom + x_t, R(x_r) R_nom)"""
    position = hand.position + hand.rotation.apply(nominal.position + x[:3])
    rotation = hand.rotation * Rotation.from_rotvec(x[3:]) * nominal.rotation
    return Pose(position, rotation)


def offset_for(object_pose: Pose, hand: Pose, nominal: Pose) -> np.ndarray:
    """Inverse of object_pose_for"""
    inv = hand.rotation.inv()
    x_t = inv.apply(object_pose.position - hand.position) - nominal.position
    x_r = (inv * object_pose.rotation * nominal.rotation.inv()).as_rotvec()
    return np.concatenate([x_t, x_r])


def grasp_wrench(offset: GraspOffset, grasp: GraspModel) -> Wrench:
    """Hand-frame wrench exerted through the grasp, clamped at the plateaus"""
    raw = grasp.stiffness * offset.values
    return Wrench.from_array(np.clip(raw, -grasp.plateau, grasp.plateau))


def slip_update(offset: GraspOffset, grasp: GraspModel) -> Tuple[GraspOffset, np.ndarray]:
    """Clamp the elastic offset at the plateau; the excess is slip"""
    limit = grasp.offset_limit
    clamped = np.clip(offset.values, -limit, limit)
    return GraspOffset(clamped), offset.values - clamped


def shift_nominal(nominal: Pose, before: np.ndarray, after: np.ndarray) -> Pose:
    """Move the grasp rest pose so the object's world pose is unchanged when the offset goes before -> after"""
    position = nominal.position + (before[:3] - after[:3])
    rotation = Rotation.from_rotvec(after[3:]).inv() * Rotation.from_rotvec(before[3:]) * nominal.rotation
    return Pose(position, rotation)


def read_sensor(state: SimState, grasp: GraspModel, noise: SensorNoise = SensorNoise()) -> Wrench:
    """Grasp wrench plus Gaussian sensor noise (draws from the state's generator)"""
    clean = state.grasp_wrench(grasp)
    return Wrench(clean.force + state.rng.normal(0.0, noise.force, 3),
                  clean.torque + state.rng.normal(0.0, noise.torque, 3))


def _integrate_hand(hand: Pose, command: HandCommand, dt: float) -> Pose:
    if command.is_still:
        return hand
    return Pose(hand.position + command.linear * dt,
                Rotation.from_rotvec(command.angular * dt) * hand.rotation)


def _slew_tilt(current: np.ndarray, target: Optional[np.ndarray], grasp: GraspModel, dt: float) -> np.ndarray:
    if target is None:
        return current
    norm = np.linalg.norm(target)
    if norm > grasp.inhand_range:
        target = target * grasp.inhand_range / norm
    delta = target - current
    distance = np.linalg.norm(delta)
    step = grasp.inhand_rate * dt
    if distance <= step:
        return target.copy()
    return current + delta * step / distance


def _retilt(nominal: Pose, old: np.ndarray, new: np.ndarray) -> Pose:
    if np.array_equal(old, new):
        return nominal
    change = Rotation.from_rotvec([new[0], new[1], 0.0]) * Rotation.from_rotvec([old[0], old[1], 0.0]).inv()
    return Pose(nominal.position, change * nominal.rotation)


def _jacobian(points: np.ndarray, directions: np.ndarray, pose: Pose, hand: Pose) -> np.ndarray:
    """Rows map a hand-frame offset change to motion of material points along `directions`"""
    lever = np.cross(points - pose.position, directions)
    inv = hand.rotation.inv()
    return np.hstack([inv.apply(directions), inv.apply(lever)])


def _tangent_basis(normals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.where(np.abs(normals[:, [2]]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    t1 = np.cross(normals, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    return t1, np.cross(normals, t1)


def _penetration(candidates: ContactCandidates) -> float:
    return max(0.0, -float(candidates.gaps.min())) if len(candidates) else 0.0


class ContactSolver:
    """
    Projected Gauss-Seidel on
        min 1/2 (x - x*)^T K (x - x*)
        s.t. linearised non-penetration rows, Coulomb-bounded tangential rows
    followed by exact frictionless projections of any penetration left over.
    """

    def __init__(self, scene: PhysicsScene):
        self.scene = scene
        self.config = scene.config
        self.compliance = scene.grasp.compliance
        self.reach = max(scene.config.SOLVER_MARGIN, scene.config.CONTACT_TOL)

    def candidates_at(self, hand: Pose, nominal: Pose, x: np.ndarray,
                      planes: Sequence[Tuple[np.ndarray, np.ndarray]]) -> Tuple[Pose, ContactCandidates]:
        pose = object_pose_for(hand, nominal, x)
        return pose, contact_candidates(self.scene.peg, pose, self.scene.board, planes, self.config, self.reach)

    def solve(self, hand: Pose, nominal: Pose, x_target: np.ndarray, x_prev: np.ndarray,
              planes: Sequence[Tuple[np.ndarray, np.ndarray]]) -> Tuple[np.ndarray, int, ContactCandidates]:
        """Settled offset, solver effort and the constraints at the settled pose"""
        cfg = self.config
        x = x_target.copy()
        pose, candidates = self.candidates_at(hand, nominal, x, planes)
        iterations = 0
        for _ in range(_MAX_RELINEARIZATIONS):
            if _penetration(candidates) <= cfg.TOL_PEN or iterations >= cfg.SOLVER_MAX_ITERATIONS:
                break
            near = candidates.select(candidates.gaps <= cfg.SOLVER_MARGIN)
            x, used = self._sweeps(near, pose, hand, x, x_target, x_prev, cfg.SOLVER_MAX_ITERATIONS - iterations)
            iterations += used
            pose, candidates = self.candidates_at(hand, nominal, x, planes)
        return self._clean_up(hand, nominal, pose, x, x_prev, candidates, planes, iterations)

    def _sweeps(self, near: ContactCandidates, pose: Pose, hand: Pose, x_lin: np.ndarray, x_start: np.ndarray,
                x_prev: np.ndarray, budget: int) -> Tuple[np.ndarray, int]:
        """Gauss-Seidel over contact rows linearised at x_lin, starting from x_start with zero multipliers"""
        contacts = cluster_contacts(near, self.config)
        points, normals, gaps = contacts.points, contacts.normals, contacts.gaps
        normal_rows = _jacobian(points, normals, pose, hand)
        rows = [normal_rows]
        mu = self.scene.friction
        frictional = np.array([c.surface != Surface.PUSHER for c in contacts]) if mu > 0 else np.zeros(len(gaps), bool)
        parents = np.flatnonzero(frictional)
        if len(parents):
            t1, t2 = _tangent_basis(normals[parents])
            rows.append(_jacobian(points[parents], t1, pose, hand))
            rows.append(_jacobian(points[parents], t2, pose, hand))
        J = np.vstack(rows)
        W = J * self.compliance
        diag = np.einsum('ij,ij->i', J, W)
        n_normal = len(gaps)
        parent_of = np.concatenate([parents, parents])
        lam = np.zeros(len(J))
        x = x_start.copy()
        used = 0
        for used in range(1, max(budget, 1) + 1):
            largest = 0.0
            for j in range(n_normal):
                residual = gaps[j] + J[j] @ (x - x_lin)
                new = max(0.0, lam[j] - residual / diag[j])
                delta = new - lam[j]
                if delta:
                    x += delta * W[j]
                    lam[j] = new
                    largest = max(largest, abs(delta))
            for k, j in enumerate(range(n_normal, len(J))):
                bound = mu * lam[parent_of[k]]
                residual = J[j] @ (x - x_prev)
                new = min(bound, max(-bound, lam[j] - residual / diag[j]))
                delta = new - lam[j]
                if delta:
                    x += delta * W[j]
                    lam[j] = new
                    largest = max(largest, abs(delta))
            if largest < self.config.SOLVER_TOLERANCE:
                break
        return x, used

    def _clean_up(self, hand: Pose, nominal: Pose, pose: Pose, x: np.ndarray, x_prev: np.ndarray,
                  candidates: ContactCandidates, planes: Sequence[Tuple[np.ndarray, np.ndarray]],
                  iterations: int) -> Tuple[np.ndarray, int, ContactCandidates]:
        """
        Project onto every near constraint at once until the penetration
        tolerance holds. When the projections run out, the previous object
        pose is kept if it is still clear; otherwise the command is impossible.
        """
        cfg = self.config
        for _ in range(cfg.SOLVER_CLEANUP_ITERATIONS):
            if _penetration(candidates) <= cfg.TOL_PEN:
                return x, iterations, candidates
            step = self._project(candidates.select(candidates.gaps <= cfg.SOLVER_MARGIN), pose, hand)
            if step is None:
                break
            x = x + step
            iterations += 1
            pose, candidates = self.candidates_at(hand, nominal, x, planes)
        if _penetration(candidates) <= cfg.TOL_PEN:
            return x, iterations, candidates

        _, held = self.candidates_at(hand, nominal, x_prev, planes)
        if _penetration(held) <= cfg.TOL_PEN:
            logging.debug(f"projection stalled at {_penetration(candidates) * 1e3:.4f} mm, object held in place")
            return x_prev.copy(), iterations, held
        raise SolverDivergedError(_penetration(candidates), iterations)

    def _project(self, near: ContactCandidates, pose: Pose, hand: Pose) -> Optional[np.ndarray]:
        """
        Smallest K-norm offset change that closes every linearised gap:
            min |z|  s.t.  G z >= h,  z = K^1/2 dx
        solved as a least-distance program through NNLS. None when the rows
        are incompatible.
        """
        scale = np.sqrt(self.compliance)
        G = _jacobian(near.points, near.normals, pose, hand) * scale
        norms = np.linalg.norm(G, axis=1)
        G, h = G / norms[:, None], -near.gaps / norms
        E = np.vstack([G.T, h])
        f = np.zeros(len(E))
        f[-1] = 1.0
        try:
            u, _ = nnls(E, f)
        except RuntimeError as e:
            logging.debug(f"NNLS projection failed: {e}")
            return None
        residual = E @ u - f
        if abs(residual[-1]) < 1e-9:
            return None
        return scale * (-residual[:-1] / residual[-1])


def quasi_static_step(state: SimState, command: HandCommand, dt: float, scene: PhysicsScene) -> SimState:
    """Advance the hand by `command` and settle the grasped object"""
    t = state.t + dt
    hand = _integrate_hand(state.hand_pose, command, dt)
    if state.released or command.release:
        obj = state.object_pose
        return replace(state, t=t, hand_pose=hand, released_object=obj, offset=GraspOffset())

    tilt = _slew_tilt(state.inhand_tilt, command.inhand_tilt, scene.grasp, dt)
    nominal = _retilt(state.grasp_nominal, state.inhand_tilt, tilt)
    pushers_moving = any(p.speed for p in scene.pushers)
    if command.is_still and nominal is state.grasp_nominal and not pushers_moving:
        return replace(state, t=t)

    planes = scene.planes_at(t)
    x_prev = offset_for(state.object_pose, hand, nominal)
    x_target = _external_target(scene, state, hand)
    x, iterations, candidates = ContactSolver(scene).solve(hand, nominal, x_target, x_prev, planes)
    logging.debug(f"t={t:.3f}s solver used {iterations} sweeps")

    clamped, slip = slip_update(GraspOffset(x), scene.grasp)
    if np.any(slip):
        nominal = shift_nominal(nominal, x, clamped.values)
    # slip leaves the object pose unchanged
    contacts = contacts_within(candidates, scene.config.CONTACT_TOL, scene.config)
    return replace(state, t=t, hand_pose=hand, grasp_nominal=nominal, offset=clamped, inhand_tilt=tilt,
                   slip=state.slip + slip, contacts=contacts, solver_iterations=iterations)


def _external_target(scene: PhysicsScene, state: SimState, hand: Pose) -> np.ndarray:
    """Offset the grasp settles at with no contacts (plunger resistance while engaged)"""
    target = np.zeros(6)
    if scene.axial_resistance > 0 and engaged_depth(scene.peg, state.object_pose, scene.board) > 0:
        force = hand.rotation.inv().apply([0.0, 0.0, scene.axial_resistance])
        target[:3] = force * scene.grasp.compliance[:3]
    return target


def default_pusher_peg() -> Peg:
    """20 mm square peg used when a plateau experiment names no scene"""
    half = 0.01
    return Peg(make_cross_section([[-half, -half], [half, -half], [half, half], [-half, half]]), 0.04)


def virtual_pusher(grasp: GraspModel, axis: str, speed: float, duration: float,
                   peg: Optional[Peg] = None, noise: SensorNoise = SensorNoise(),
                   rng: Optional[np.random.Generator] = None,
                   config: SimConfig = DEFAULT_CONFIG) -> Tuple[np.ndarray, np.ndarray]:
    """
    Push the grasped object with a plane moving along +axis while the hand
    stays still; returns sensor-rate times and the force along that axis.
    """
    if axis not in ("x", "y", "z"):
        raise ValueError(f"pusher axis must be x, y or z, got {axis!r}")
    peg = peg or default_pusher_peg()
    index = AXES.index(axis)
    normal = np.zeros(3)
    normal[index] = 1.0
    state = initial_state(Pose.identity(), rng if rng is not None else np.random.default_rng(0))
    lowest = float((state.object_pose.apply(peg.samples(config).points) @ normal).min())
    scene = PhysicsScene(peg=peg, board=None, grasp=grasp, config=config,
                         pushers=(Pusher(origin=normal * lowest, normal=normal, speed=speed),))

    times, values = [], []
    steps = config.steps_per_sample
    total = int(round(duration / config.DT))
    if total <= 0:
        return np.zeros(0), np.zeros(0)
    hold = HandCommand.hold()
    for i in range(total + 1):
        if i % steps == 0:
            times.append(state.t)
            values.append(read_sensor(state, grasp, noise).force[index])
        if i < total:
            state = quasi_static_step(state, hold, config.DT, scene)
    return np.array(times), np.array(values)
