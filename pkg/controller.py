"""
Seven-step contact-formation insertion controller
"""
import logging
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Deque, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from compliance import GraspModel, HandCommand
from errors import ConfigError, JamDetectedError, StepTimeoutError, TiltUnreachableError
from geometry import CrossSection, Peg
from models import Pose, Wrench, Z_AXIS, wrap_angle


class StepId(IntEnum):
    REACH_PLANE = 1
    SEARCH = 2
    WEDGE = 3
    ROT_ALIGN = 4
    TILT_CORRECT = 5
    INSERT = 6
    RETRACT = 7


@dataclass(frozen=True)
class WrenchTarget:
    """Task-frame resistance targets for one step"""
    values: Mapping[str, float]
    hold: Tuple[str, ...] = ()
    detect: Optional[str] = None
    detect_factor: float = 1.0


@dataclass(frozen=True)
class Workspace:
    center: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        object.__setattr__(self, "size", np.asarray(self.size, dtype=float).reshape(2))

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.size / 2.0

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.size / 2.0

    def contains(self, xy: np.ndarray, margin: float = 0.0) -> bool:
        xy = np.asarray(xy, dtype=float)[:2]
        return bool(np.all(xy >= self.lower + margin) and np.all(xy <= self.upper - margin))


@dataclass(frozen=True)
class PoseObservation:
    t: float
    position: np.ndarray
    rotation: Rotation

    @property
    def pose(self) -> Pose:
        return Pose(self.position, self.rotation)


@dataclass(frozen=True)
class SensorView:
    """What the controller may see: wrench, proprioception and the object-pose observation"""
    t: float
    wrench: Wrench
    hand_pose: Pose
    inhand_tilt: np.ndarray
    observation: PoseObservation


@dataclass
class ControllerConfig:
    force_z: float = 1.5
    force_xy: float = 0.7
    torque_z: float = 0.1
    gain_xy: float = 0.004          # m/s per N
    gain_z: float = 0.003           # m/s per N
    gain_rz: float = 0.5            # rad/s per N m
    gain_tilt: float = 1.0          # 1/s
    explore_speed: float = 0.012
    explore_period: float = 2.0
    explore_turn_max: float = np.radians(90.0)
    explore_tilt: float = np.radians(10.0)
    explore_pattern: str = "random"
    lane_spacing: float = 0.015
    contact_fraction: float = 0.5
    threshold_fraction: float = 1.0
    force_band: float = 0.15        # 3 sigma of the force noise
    torque_band: float = 0.015
    hold_band: float = 0.3
    debounce: float = 0.3
    sharp_rise_factor: float = 2.0
    tilt_done: float = np.radians(2.0)
    lateral_exit: float = 0.2
    jam_fraction: float = 0.95
    insert_speed: float = 0.005
    retract_height: float = 0.10
    retract_speed: float = 0.02
    max_speed: float = 0.02
    max_rate: float = np.radians(10.0)
    search_timeout: float = 120.0
    step_timeout: float = 60.0
    sensor_hz: float = 30.0

    @property
    def window_size(self) -> int:
        return max(1, int(round(self.debounce * self.sensor_hz)))

    def timeout(self, step: StepId) -> float:
        return self.search_timeout if step == StepId.SEARCH else self.step_timeout

    def band(self, axis: str) -> float:
        return self.torque_band if axis.startswith("t") else self.force_band

    def validate(self, grasp: GraspModel) -> bool:
        """Gains, fractions and the 50%-of-plateau target ratio"""
        for name in ("gain_xy", "gain_z", "gain_rz", "gain_tilt", "explore_speed", "insert_speed",
                     "retract_speed", "debounce", "sensor_hz", "search_timeout", "step_timeout"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.threshold_fraction <= 1.0:
            raise ConfigError(f"threshold_fraction must be in (0, 1], got {self.threshold_fraction}")
        if self.explore_pattern not in ("random", "boustrophedon"):
            raise ConfigError(f"unknown exploration pattern {self.explore_pattern!r}")
        for name, value, plateau in (("force_xy", self.force_xy, min(grasp.plateau[0], grasp.plateau[1])),
                                     ("force_z", self.force_z, grasp.plateau[2]),
                                     ("torque_z", self.torque_z, grasp.plateau[5])):
            if value > 0.5 * plateau + 1e-12:
                raise ConfigError(f"{name} target {value} exceeds half its plateau {plateau}")
        if self.sharp_rise_factor * self.force_z >= grasp.plateau[2]:
            raise ConfigError("sharp-rise threshold is not below the axial plateau")
        return True


def step_targets(step: StepId, cfg: ControllerConfig) -> WrenchTarget:
    """Targets, held axes and the detection axis of each step"""
    if step == StepId.REACH_PLANE:
        return WrenchTarget({"fz": cfg.force_z}, detect="fz")
    if step == StepId.SEARCH:
        return WrenchTarget({"fz": cfg.force_z, "fx": cfg.force_xy}, hold=("fz",), detect="fx")
    if step == StepId.WEDGE:
        return WrenchTarget({"fz": cfg.force_z, "fx": cfg.force_xy, "fy": cfg.force_xy},
                            hold=("fz", "fx"), detect="fy")
    if step == StepId.ROT_ALIGN:
        # lateral holds are perturbed by the rotation itself; only the axial hold gates the exit
        return WrenchTarget({"fz": cfg.force_z, "fx": cfg.force_xy, "fy": cfg.force_xy, "tz": cfg.torque_z},
                            hold=("fz",), detect="tz")
    if step == StepId.TILT_CORRECT:
        return WrenchTarget({"fz": cfg.force_z, "fx": 0.0, "fy": 0.0})
    if step == StepId.INSERT:
        return WrenchTarget({"fz": cfg.force_z, "fx": 0.0, "fy": 0.0}, detect="fz",
                            detect_factor=cfg.sharp_rise_factor)
    return WrenchTarget({})


def detect_transition(window: Sequence[Mapping[str, float]], target: WrenchTarget, cfg: ControllerConfig) -> bool:
    """Every sample in a full window reached the detect threshold with held axes inside the band"""
    if target.detect is None or len(window) < cfg.window_size:
        return False
    goal = target.values[target.detect]
    threshold = target.detect_factor * cfg.threshold_fraction * goal - cfg.band(target.detect)
    for sample in list(window)[-cfg.window_size:]:
        if sample[target.detect] < threshold:
            return False
        for axis in target.hold:
            if abs(sample[axis] - target.values[axis]) > cfg.hold_band * target.values[axis]:
                return False
    return True


def resistance(force_world: np.ndarray, direction: np.ndarray) -> float:
    """Force opposing motion along `direction`"""
    return float(-np.dot(direction, force_world))


def _rotate_2d(v: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def explore(rng: np.random.Generator, ws: Workspace, xy: np.ndarray, direction: np.ndarray,
            resample: bool, cfg: ControllerConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Random-walk search direction, reflected at the workspace boundary, and the
    world tilt vector that leans the peg's leading edge down toward it.
    """
    direction = np.asarray(direction, dtype=float)[:2]
    if resample:
        direction = _rotate_2d(direction, rng.uniform(-cfg.explore_turn_max, cfg.explore_turn_max))
    direction = _reflect(ws, np.asarray(xy, dtype=float)[:2], direction)
    return direction, tilt_toward(direction, cfg.explore_tilt)


def _reflect(ws: Workspace, xy: np.ndarray, direction: np.ndarray) -> np.ndarray:
    direction = direction.copy()
    for i in range(2):
        if xy[i] <= ws.lower[i] and direction[i] < 0 or xy[i] >= ws.upper[i] and direction[i] > 0:
            direction[i] = -direction[i]
    return direction / np.linalg.norm(direction)


def tilt_toward(direction: np.ndarray, angle: float) -> np.ndarray:
    """Rotation vector leaning the peg so its bottom edge along `direction` is lowest"""
    axis = np.cross(Z_AXIS, [direction[0], direction[1], 0.0])
    return axis / np.linalg.norm(axis) * angle


class Explorer:
    """Search-direction generator: random walk or boustrophedon sweep"""

    def __init__(self, cfg: ControllerConfig, ws: Workspace, rng: np.random.Generator, start_xy: np.ndarray):
        self.cfg = cfg
        self.ws = ws
        self.rng = rng
        inward = ws.center - np.asarray(start_xy, dtype=float)[:2]
        if cfg.explore_pattern == "boustrophedon":
            inward = np.array([np.sign(inward[0]) or 1.0, 0.0])
        norm = np.linalg.norm(inward)
        self.direction = inward / norm if norm > 1e-9 else np.array([1.0, 0.0])
        self.last_resample = 0.0
        self.lane_sign = np.sign(inward[1]) or 1.0
        self.lane_target: Optional[float] = None
        self.heading = self.direction.copy()

    def update(self, t: float, xy: np.ndarray) -> np.ndarray:
        if self.cfg.explore_pattern == "boustrophedon":
            self.direction = self._sweep(np.asarray(xy)[:2])
            return self.direction
        resample = t - self.last_resample >= self.cfg.explore_period
        if resample:
            self.last_resample = t
        self.direction, _ = explore(self.rng, self.ws, xy, self.direction, resample, self.cfg)
        return self.direction

    def _sweep(self, xy: np.ndarray) -> np.ndarray:
        if self.lane_target is not None:
            if (xy[1] - self.lane_target) * self.lane_sign < 0:
                return np.array([0.0, self.lane_sign])
            self.lane_target = None
            return self.heading
        if xy[0] >= self.ws.upper[0] and self.heading[0] > 0 or xy[0] <= self.ws.lower[0] and self.heading[0] < 0:
            if not self.ws.lower[1] <= xy[1] + self.lane_sign * self.cfg.lane_spacing <= self.ws.upper[1]:
                self.lane_sign = -self.lane_sign
            self.lane_target = xy[1] + self.lane_sign * self.cfg.lane_spacing
            self.heading = -self.heading
            return np.array([0.0, self.lane_sign])
        return self.heading


def choose_rotation(wall_push: np.ndarray, observed_yaw: float, section: CrossSection,
                    fallback_sign: float = 1.0) -> Tuple[float, float]:
    """
    Sign and size of the shortest yaw that lines a peg face up with the wall
    the peg was pushed back from.
    """
    if section.is_circle or np.linalg.norm(wall_push[:2]) < 1e-9:
        return fallback_sign, 0.0
    outward = np.arctan2(-wall_push[1], -wall_push[0])
    normals = section.edge_normals
    face_angles = np.arctan2(normals[:, 1], normals[:, 0]) + observed_yaw
    deltas = np.array([wrap_angle(outward - a) for a in face_angles])
    delta = float(deltas[np.argmin(np.abs(deltas))])
    if abs(delta) < np.radians(1.0):
        return fallback_sign, delta
    return float(np.sign(delta)), delta


def rot_align(torque_world_z: float, sign: float, cfg: ControllerConfig) -> float:
    """Yaw rate: rotate in `sign` until the opposing torque reaches its target"""
    opposing = -sign * torque_world_z
    rate = cfg.gain_rz * (cfg.torque_z - opposing)
    return sign * float(np.clip(rate, -cfg.max_rate, cfg.max_rate))


def tilt_correct(view: SensorView, tilt_estimate: np.ndarray, peg: Peg, cfg: ControllerConfig,
                 dt: float, grasp: GraspModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Upright the peg about its lowest observed bottom point. The in-hand joint
    unwinds toward zero at its rate limit; the arm rotates away the remainder
    and translates so the pivot stays put. Returns (linear, angular, in-hand target).
    """
    hand = view.hand_pose
    ih = np.asarray(view.inhand_tilt, dtype=float)
    ih_norm = np.linalg.norm(ih)
    ih_rate = np.zeros(2) if ih_norm < 1e-12 else -ih / ih_norm * min(grasp.inhand_rate, ih_norm / dt)
    inhand_world = hand.rotation.apply([ih[0], ih[1], 0.0])
    omega_inhand = hand.rotation.apply([ih_rate[0], ih_rate[1], 0.0])

    residual = tilt_estimate - inhand_world
    residual[2] = 0.0
    omega_arm = -cfg.gain_tilt * residual
    rate = np.linalg.norm(omega_arm)
    if rate > cfg.max_rate:
        omega_arm *= cfg.max_rate / rate

    obs = view.observation.pose
    pivot = peg.lowest_bottom_point(obs)
    omega = omega_arm + omega_inhand
    linear = np.cross(omega, obs.position - pivot) - np.cross(omega_arm, obs.position - hand.position)
    return linear, omega_arm, np.zeros(2)


@dataclass
class TickResult:
    command: HandCommand
    transition: Optional[StepId] = None
    done: bool = False


class InsertionController:
    """Sequences the seven steps, one tick per sensor sample"""

    def __init__(self, cfg: ControllerConfig, peg: Peg, workspace: Workspace, grasp: GraspModel,
                 rng: np.random.Generator, start_xy: np.ndarray):
        cfg.validate(grasp)
        self.cfg = cfg
        self.peg = peg
        self.ws = workspace
        self.grasp = grasp
        self.rng = rng
        self.dt = 1.0 / cfg.sensor_hz
        self.explorer = Explorer(cfg, workspace, rng, start_xy)
        self.step = StepId.REACH_PLANE
        self.step_start = 0.0
        self.window: Deque[Dict[str, float]] = deque(maxlen=cfg.window_size)
        self.tilts: Deque[np.ndarray] = deque(maxlen=cfg.window_size)
        self.x_task = self.explorer.direction.copy()
        self.y_task = _rotate_2d(self.x_task, np.pi / 2)
        self.latched = False
        self.wall_push = np.zeros(2)
        self.rotation_sign = 1.0
        self.rotation_planned = 0.0
        self.rotation_commanded = 0.0
        self.retract_from: Optional[float] = None

    def tick(self, view: SensorView) -> TickResult:
        elapsed = view.t - self.step_start
        if elapsed > self.cfg.timeout(self.step):
            self._raise_timeout(elapsed)

        force = view.hand_pose.rotation.apply(view.wrench.force)
        torque = view.hand_pose.rotation.apply(view.wrench.torque)
        sample = self._sample(force, torque)
        self.window.append(sample)
        self.tilts.append(view.observation.pose.tilt_vector)

        handler = {
            StepId.REACH_PLANE: self._reach_plane,
            StepId.SEARCH: self._search,
            StepId.WEDGE: self._wedge,
            StepId.ROT_ALIGN: self._rot_align,
            StepId.TILT_CORRECT: self._tilt_correct,
            StepId.INSERT: self._insert,
            StepId.RETRACT: self._retract,
        }[self.step]
        return handler(view, force, torque, sample)

    def _raise_timeout(self, elapsed: float):
        if self.step == StepId.TILT_CORRECT:
            tilt = float(np.linalg.norm(np.mean(self.tilts, axis=0))) if self.tilts else 0.0
            if tilt > self.cfg.tilt_done:
                raise TiltUnreachableError(tilt)
        raise StepTimeoutError(self.step, elapsed)

    def _sample(self, force: np.ndarray, torque: np.ndarray) -> Dict[str, float]:
        x = np.array([self.x_task[0], self.x_task[1], 0.0])
        y = np.array([self.y_task[0], self.y_task[1], 0.0])
        return {
            "fx": resistance(force, x),
            "fy": resistance(force, y),
            "fz": float(force[2]),
            "tz": float(-self.rotation_sign * torque[2]),
            "lateral": float(np.hypot(force[0], force[1])),
        }

    def _advance(self, t: float, nxt: StepId) -> StepId:
        logging.info(f"t={t:.2f}s step {self.step.name} -> {nxt.name}")
        self.step = nxt
        self.step_start = t
        self.window.clear()
        self.latched = False
        return nxt

    def _z_hold(self, force: np.ndarray, target: Optional[float] = None) -> float:
        goal = self.cfg.force_z if target is None else target
        return float(np.clip(-self.cfg.gain_z * (goal - force[2]), -self.cfg.max_speed, self.cfg.max_speed))

    def _admit(self, force: np.ndarray, direction: np.ndarray, goal: float) -> np.ndarray:
        d3 = np.array([direction[0], direction[1], 0.0])
        return self.cfg.gain_xy * (goal - resistance(force, d3)) * d3

    def _clip_linear(self, v: np.ndarray) -> np.ndarray:
        speed = np.linalg.norm(v)
        return v * self.cfg.max_speed / speed if speed > self.cfg.max_speed else v

    def _inhand_target(self, view: SensorView, tilt_world: np.ndarray) -> np.ndarray:
        local = view.hand_pose.rotation.inv().apply(tilt_world)
        return local[:2]

    def _explore_velocity(self, view: SensorView) -> np.ndarray:
        direction = self.explorer.update(view.t, view.hand_pose.position)
        self.x_task = direction.copy()
        self.y_task = _rotate_2d(direction, np.pi / 2)
        return self.cfg.explore_speed * np.array([direction[0], direction[1], 0.0])

    def _reach_plane(self, view: SensorView, force, torque, sample) -> TickResult:
        linear = np.array([0.0, 0.0, self._z_hold(force)])
        if sample["fz"] >= self.cfg.contact_fraction * self.cfg.force_z:
            linear += self._explore_velocity(view)
        tilt = self._inhand_target(view, tilt_toward(self.x_task, self.cfg.explore_tilt))
        command = HandCommand(self._clip_linear(linear), np.zeros(3), tilt)
        if detect_transition(self.window, step_targets(StepId.REACH_PLANE, self.cfg), self.cfg):
            return TickResult(command, self._advance(view.t, StepId.SEARCH))
        return TickResult(command)

    def _search(self, view: SensorView, force, torque, sample) -> TickResult:
        linear = np.array([0.0, 0.0, self._z_hold(force)])
        if not self.latched and sample["fx"] >= self.cfg.contact_fraction * self.cfg.force_xy:
            self.latched = True
        if self.latched:
            linear += self._admit(force, self.x_task, self.cfg.force_xy)
            linear += self._admit(force, self.y_task, 0.0)
        else:
            linear += self._explore_velocity(view)
        tilt = self._inhand_target(view, tilt_toward(self.x_task, self.cfg.explore_tilt))
        command = HandCommand(self._clip_linear(linear), np.zeros(3), tilt)
        if detect_transition(self.window, step_targets(StepId.SEARCH, self.cfg), self.cfg):
            self.wall_push = self._lateral_push()
            logging.info(f"wall push direction {np.degrees(np.arctan2(self.wall_push[1], self.wall_push[0])):.1f} deg")
            return TickResult(command, self._advance(view.t, StepId.WEDGE))
        return TickResult(command)

    def _lateral_push(self) -> np.ndarray:
        """Mean horizontal push the wall exerted over the detection window"""
        fx = np.mean([s["fx"] for s in self.window])
        fy = np.mean([s["fy"] for s in self.window])
        push = -(fx * self.x_task + fy * self.y_task)
        norm = np.linalg.norm(push)
        return push / norm if norm > 1e-12 else -self.x_task

    def _wedge(self, view: SensorView, force, torque, sample) -> TickResult:
        linear = np.array([0.0, 0.0, self._z_hold(force)])
        linear += self._admit(force, self.x_task, self.cfg.force_xy)
        if not self.latched and sample["fy"] >= self.cfg.contact_fraction * self.cfg.force_xy:
            self.latched = True
        if self.latched:
            linear += self._admit(force, self.y_task, self.cfg.force_xy)
        else:
            linear += self.cfg.explore_speed * np.array([self.y_task[0], self.y_task[1], 0.0])
        command = HandCommand(self._clip_linear(linear), np.zeros(3), None)
        if detect_transition(self.window, step_targets(StepId.WEDGE, self.cfg), self.cfg):
            if self.peg.is_axisymmetric:
                return TickResult(command, self._advance(view.t, StepId.TILT_CORRECT))
            fallback = float(np.sign(torque[2])) or 1.0
            self.rotation_sign, self.rotation_planned = choose_rotation(
                self.wall_push, view.observation.pose.yaw, self.peg.section, fallback)
            logging.info(f"rotating {'+' if self.rotation_sign > 0 else '-'}yaw, "
                         f"estimated {np.degrees(abs(self.rotation_planned)):.1f} deg to alignment")
            self.rotation_commanded = 0.0
            return TickResult(command, self._advance(view.t, StepId.ROT_ALIGN))
        return TickResult(command)

    def _rot_align(self, view: SensorView, force, torque, sample) -> TickResult:
        linear = np.array([0.0, 0.0, self._z_hold(force)])
        linear += self._admit(force, self.x_task, self.cfg.force_xy)
        linear += self._admit(force, self.y_task, self.cfg.force_xy)
        yaw_rate = rot_align(float(torque[2]), self.rotation_sign, self.cfg)
        self.rotation_commanded += yaw_rate * self.dt
        command = HandCommand(self._clip_linear(linear), np.array([0.0, 0.0, yaw_rate]), None)
        if detect_transition(self.window, step_targets(StepId.ROT_ALIGN, self.cfg), self.cfg):
            logging.info(f"hinge reached after {np.degrees(abs(self.rotation_commanded)):.1f} deg of yaw")
            return TickResult(command, self._advance(view.t, StepId.TILT_CORRECT))
        return TickResult(command)

    def _tilt_correct(self, view: SensorView, force, torque, sample) -> TickResult:
        estimate = np.mean(self.tilts, axis=0)
        linear, angular, inhand = tilt_correct(view, estimate, self.peg, self.cfg, self.dt, self.grasp)
        linear = linear + np.array([self.cfg.gain_xy * force[0], self.cfg.gain_xy * force[1], self._z_hold(force)])
        command = HandCommand(self._clip_linear(linear), angular, inhand)
        upright = len(self.tilts) == self.cfg.window_size and np.linalg.norm(estimate) < self.cfg.tilt_done
        settled = len(self.window) == self.cfg.window_size and all(
            s["lateral"] < self.cfg.lateral_exit for s in self.window)
        if upright and settled:
            return TickResult(command, self._advance(view.t, StepId.INSERT))
        return TickResult(command)

    def _insert(self, view: SensorView, force, torque, sample) -> TickResult:
        linear = np.array([self.cfg.gain_xy * force[0], self.cfg.gain_xy * force[1], -self.cfg.insert_speed])
        command = HandCommand(self._clip_linear(linear), np.zeros(3), np.zeros(2))
        if detect_transition(self.window, step_targets(StepId.INSERT, self.cfg), self.cfg):
            self.retract_from = float(view.hand_pose.position[2])
            return TickResult(command, self._advance(view.t, StepId.RETRACT))
        pinned = self.cfg.jam_fraction * min(self.grasp.plateau[0], self.grasp.plateau[1]) - self.cfg.force_band
        if len(self.window) == self.cfg.window_size and all(s["lateral"] >= pinned for s in self.window):
            raise JamDetectedError(f"lateral force pinned at the grasp plateau at t={view.t:.2f}s")
        return TickResult(command)

    def _retract(self, view: SensorView, force, torque, sample) -> TickResult:
        if self.retract_from is None:
            self.retract_from = float(view.hand_pose.position[2])
        risen = view.hand_pose.position[2] - self.retract_from
        if risen >= self.cfg.retract_height:
            logging.info(f"t={view.t:.2f}s retract complete")
            return TickResult(HandCommand(release=True), done=True)
        return TickResult(HandCommand(np.array([0.0, 0.0, self.cfg.retract_speed]), release=True))
