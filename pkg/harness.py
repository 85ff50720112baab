"""
Scenes, trials, suites and the plateau experiment
"""
import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from compliance import (GraspModel, PhysicsScene, SensorNoise, SimState, initial_state, quasi_static_step,
                        read_sensor, virtual_pusher)
from controller import (ControllerConfig, InsertionController, PoseObservation, SensorView, StepId, Workspace)
from errors import (AssumptionViolatedError, DeepPenetrationError, JamDetectedError, NonConvexError,
                    SceneParseError, SolverDivergedError, StepTimeoutError, TiltUnreachableError,
                    UnclassifiableError)
from formations import CFLabel, CFTrace, PathReport, check_path, classify_state
from geometry import (CrossSection, HoleBoard, Peg, convex_hull_section, dilate_section, engaged_depth,
                      make_cross_section)
from models import Pose, wrap_angle
from sim_config import DEFAULT_CONFIG, SimConfig
from trial_analytics import suite_analytics
from trial_monitor import TrialMonitor

SCHEMA_VERSION = 1
MM = 1e-3

LOG_COLUMNS = [
    "t_s", "step", "cf_label", "fx_N", "fy_N", "fz_N", "tx_Nm", "ty_Nm", "tz_Nm",
    "hand_x_m", "hand_y_m", "hand_z_m", "obj_x_m", "obj_y_m", "obj_z_m",
    "obj_yaw_rad", "obj_tilt_rad", "slip_x_m", "slip_y_m", "slip_rz_rad",
]

TRIAL_FAILURES = (StepTimeoutError, SolverDivergedError, JamDetectedError, TiltUnreachableError,
                  DeepPenetrationError)
INSERT_STEPS = (StepId.WEDGE, StepId.ROT_ALIGN, StepId.TILT_CORRECT, StepId.INSERT)


@dataclass(frozen=True, eq=False)
class Scene:
    name: str
    peg: Peg
    clearance: float
    workspace: Workspace
    start_xy: np.ndarray
    has_hole: bool = True
    hole_xy: Optional[np.ndarray] = None
    axial_offset: float = 0.0
    hole_depth: float = 0.02
    plane_height: float = 0.0
    friction: float = DEFAULT_CONFIG.DEFAULT_FRICTION
    start_height: float = 0.01
    grasp: GraspModel = field(default_factory=GraspModel)
    sensor_noise: SensorNoise = field(default_factory=SensorNoise)
    orientation_noise: float = np.radians(1.0)
    position_noise: float = 1e-3
    axial_resistance: float = 0.0
    near_convex: bool = False
    inverted: bool = False
    expected: str = "success"

    @property
    def hole_section(self) -> Optional[CrossSection]:
        return dilate_section(self.peg.section, self.clearance) if self.has_hole else None

    def board_for(self, rng: np.random.Generator) -> HoleBoard:
        """Hole pose for one trial; randomized inside the workspace unless fixed by the scene"""
        section = self.hole_section
        if section is None:
            return HoleBoard(None, plane_height=self.plane_height, hole_depth=self.hole_depth,
                             friction=self.friction)
        xy = self.hole_xy if self.hole_xy is not None else self._sample_hole_xy(rng, section)
        return HoleBoard(section, xy, self.axial_offset, self.plane_height, self.hole_depth, self.friction)

    def _sample_hole_xy(self, rng: np.random.Generator, section: CrossSection) -> np.ndarray:
        margin = section.bounding_radius
        keep_out = self.peg.section.bounding_radius + section.bounding_radius + 3 * MM
        low, high = self.workspace.lower + margin, self.workspace.upper - margin
        for _ in range(1000):
            xy = rng.uniform(low, high)
            if np.linalg.norm(xy - self.start_xy) > keep_out:
                return xy
        raise AssumptionViolatedError("trial starts in free space",
                                      "no hole placement clears the start footprint")


@dataclass
class TrialResult:
    scenario: str
    seed: int
    success: bool
    failure_reason: Optional[str]
    completion_time: float
    explore_time: float
    insert_time: float
    step_times: Dict[str, float]
    trace: List[Tuple[float, str, int]]
    path: PathReport
    slip: List[float]
    final_depth: float
    wall_time: float
    peak_rss_mb: float
    samples: int
    pose_error: Optional[Dict[str, float]] = None
    log_path: Optional[str] = None

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["path"] = {
            "passed": self.path.passed,
            "labels": [label.name for label in self.path.path],
            "violation_time": self.path.violation_time,
            "violation": self.path.violation,
        }
        return data


@dataclass(frozen=True)
class PlateauResult:
    axis: str
    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    plateau: float
    rise_r2: float


@dataclass(frozen=True)
class ScenarioSuite:
    name: str
    scenarios: Tuple[Tuple[str, Scene], ...]


def _require(data: Dict, key: str):
    if key not in data:
        raise SceneParseError(f"missing field {key!r}")
    return data[key]


def _section_from(entry: Dict) -> CrossSection:
    shape = _require(entry, "shape")
    try:
        if shape == "circle":
            return make_cross_section(radius=float(_require(entry, "radius_mm")) * MM)
        if shape == "rectangle":
            w, h = (float(v) * MM / 2.0 for v in _require(entry, "size_mm"))
            return make_cross_section([[-w, -h], [w, -h], [w, h], [-w, h]])
        if shape == "square":
            s = float(_require(entry, "side_mm")) * MM / 2.0
            return make_cross_section([[-s, -s], [s, -s], [s, s], [-s, s]])
        if shape == "triangle":
            side = float(_require(entry, "side_mm")) * MM
            angles = np.radians([90.0, 210.0, 330.0])
            r = side / np.sqrt(3.0)
            return make_cross_section(np.column_stack([r * np.cos(angles), r * np.sin(angles)]))
        if shape == "polygon":
            return make_cross_section(np.asarray(_require(entry, "vertices_mm"), dtype=float) * MM)
        if shape == "hull":
            if "circles_mm" in entry:
                angles = np.linspace(0.0, 2.0 * np.pi, 48, endpoint=False)
                points = [(cx + r * np.cos(a), cy + r * np.sin(a))
                          for cx, cy, r in entry["circles_mm"] for a in angles]
            else:
                points = _require(entry, "points_mm")
            return convex_hull_section(np.asarray(points, dtype=float) * MM)
    except NonConvexError as e:
        raise AssumptionViolatedError("convex cross-section", str(e))
    raise SceneParseError(f"unknown peg shape {shape!r}")


def scene_from_dict(data: Dict, name: Optional[str] = None) -> Scene:
    """Build a Scene from its JSON form (mm / deg units)"""
    if data.get("schema_version") != SCHEMA_VERSION:
        raise SceneParseError(f"unsupported schema_version {data.get('schema_version')!r}")
    try:
        peg_data = _require(data, "peg")
        hole = _require(data, "hole")
        board = data.get("board", {})
        ws_data = _require(data, "workspace")
        start = data.get("start", {})
        sensor = data.get("sensor", {})
        observation = data.get("observation", {})
        grasp_data = data.get("grasp", {})

        peg = Peg(_section_from(peg_data), float(_require(peg_data, "length_mm")) * MM)
        has_hole = not hole.get("blank", False)
        clearance = float(hole.get("clearance_mm", 0.0)) * MM
        if has_hole and clearance <= 0:
            raise AssumptionViolatedError("positive tolerance", f"clearance {clearance / MM:.3f} mm")
        depth = float(hole.get("depth_mm", 20.0)) * MM
        if depth >= peg.length:
            raise AssumptionViolatedError("peg longer than hole depth")
        workspace = Workspace(np.asarray(ws_data.get("center_mm", [0.0, 0.0]), dtype=float) * MM,
                              np.asarray(_require(ws_data, "size_mm"), dtype=float) * MM)
        if float(start.get("tilt_deg", 0.0)) != 0.0:
            raise AssumptionViolatedError("upright initial grasp")
        if "x_mm" in start:
            start_xy = np.array([float(start["x_mm"]), float(start["y_mm"])]) * MM
        else:
            start_xy = workspace.lower.copy()
        hole_xy = None
        if "x_mm" in hole:
            hole_xy = np.array([float(hole["x_mm"]), float(hole["y_mm"])]) * MM
            if not workspace.contains(hole_xy):
                raise AssumptionViolatedError("hole inside workspace")
        friction = float(board.get("friction", DEFAULT_CONFIG.DEFAULT_FRICTION))
        if not 0.0 <= friction <= DEFAULT_CONFIG.MAX_FRICTION:
            raise AssumptionViolatedError("low contact friction", f"mu = {friction}")
        grasp = GraspModel(**{k: np.asarray(v, dtype=float) for k, v in grasp_data.items()
                              if k in ("stiffness", "plateau")}) if grasp_data else GraspModel()

        return Scene(
            name=name or data.get("name", "scene"),
            peg=peg,
            clearance=clearance,
            workspace=workspace,
            start_xy=start_xy,
            has_hole=has_hole,
            hole_xy=hole_xy,
            axial_offset=np.radians(float(hole.get("axial_offset_deg", 0.0))),
            hole_depth=depth,
            plane_height=float(board.get("plane_height_mm", 0.0)) * MM,
            friction=friction,
            start_height=float(start.get("height_mm", 10.0)) * MM,
            grasp=grasp,
            sensor_noise=SensorNoise(float(sensor.get("force_noise_N", 0.05)),
                                     float(sensor.get("torque_noise_Nm", 0.005))),
            orientation_noise=np.radians(float(observation.get("orientation_noise_deg", 1.0))),
            position_noise=float(observation.get("position_noise_mm", 1.0)) * MM,
            axial_resistance=float(data.get("plunger_resistance_N", 0.0)),
            near_convex=bool(peg_data.get("near_convex", False)),
            inverted=bool(data.get("inverted", False)),
            expected=str(data.get("expected", "success")),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SceneParseError(f"malformed scene: {e}")


def load_scene(path: Union[str, Path]) -> Scene:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SceneParseError(f"cannot read scene {path}: {e}")
    if not isinstance(data, dict):
        raise SceneParseError(f"scene {path} is not a JSON object")
    return scene_from_dict(data, data.get("name", path.stem))


def load_suite(path: Union[str, Path]) -> ScenarioSuite:
    """Suite file: scene paths relative to the suite file"""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
        entries = _require(data, "scenarios")
        scenarios = tuple(
            (entry.get("name") or Path(entry["scene"]).stem, load_scene(path.parent / entry["scene"]))
            for entry in entries
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise SceneParseError(f"cannot read suite {path}: {e}")
    return ScenarioSuite(data.get("name", path.stem), scenarios)


def observe_pose(state: SimState, scene: Scene, rng: np.random.Generator) -> PoseObservation:
    """In-palm marker observation: ground truth plus Gaussian pose noise"""
    truth = state.object_pose
    position = truth.position + rng.normal(0.0, scene.position_noise, 3)
    rotation = Rotation.from_rotvec(rng.normal(0.0, scene.orientation_noise, 3)) * truth.rotation
    return PoseObservation(state.t, position, rotation)


def _label(scene: Scene, board: HoleBoard, state: SimState, previous: CFLabel, config: SimConfig) -> CFLabel:
    try:
        return classify_state(scene.peg, state.object_pose, board, scene.clearance, state.contacts, config)
    except UnclassifiableError as e:
        logging.debug(f"t={state.t:.2f}s unclassifiable contact pattern, keeping {previous.name}: {e}")
        return previous


def _log_row(state: SimState, step: StepId, label: CFLabel, wrench) -> List[str]:
    obj = state.object_pose
    values = [state.t, int(step), label.name, *wrench.force, *wrench.torque, *state.hand_pose.position,
              *obj.position, obj.yaw, obj.tilt, state.slip[0], state.slip[1], state.slip[5]]
    return [v if isinstance(v, str) else (str(v) if isinstance(v, int) else f"{v:.9g}") for v in values]


def write_log(path: Union[str, Path], rows: Sequence[Sequence[str]]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LOG_COLUMNS)
        writer.writerows(rows)


def run_trial(scene: Scene, seed: int, log_path: Optional[Union[str, Path]] = None,
              controller_config: Optional[ControllerConfig] = None,
              config: SimConfig = DEFAULT_CONFIG) -> TrialResult:
    """One insertion attempt; deterministic for a given scene, seed and configuration"""
    hole_seq, sensor_seq, obs_seq, ctrl_seq = np.random.SeedSequence(seed).spawn(4)
    board = scene.board_for(np.random.default_rng(hole_seq))
    physics = PhysicsScene(scene.peg, board, scene.grasp, scene.axial_resistance, config=config)
    hand = Pose([scene.start_xy[0], scene.start_xy[1], scene.plane_height + scene.start_height + scene.peg.length])
    state = initial_state(hand, np.random.default_rng(sensor_seq))
    obs_rng = np.random.default_rng(obs_seq)
    ctrl_cfg = replace(controller_config or ControllerConfig(), sensor_hz=config.SENSOR_HZ)
    controller = InsertionController(ctrl_cfg, scene.peg, scene.workspace, scene.grasp,
                                     np.random.default_rng(ctrl_seq), scene.start_xy)

    logging.info(f"trial {scene.name} seed={seed}: hole at {np.round(board.hole_position / MM, 1)} mm")
    trace = CFTrace()
    label = CFLabel.CF0
    trace.record(0.0, label, 0)
    logged = log_path is not None
    rows: List[List[str]] = []
    samples = 0
    step_times: Dict[str, float] = {}
    step_started = 0.0
    failure: Optional[str] = None
    finished = False
    monitor = TrialMonitor()

    try:
        while True:
            wrench = read_sensor(state, scene.grasp, scene.sensor_noise)
            view = SensorView(state.t, wrench, state.hand_pose, state.inhand_tilt,
                              observe_pose(state, scene, obs_rng))
            step = controller.step
            # every sample is logged before the controller can fail on it
            if logged:
                label = _label(scene, board, state, label, config)
                rows.append(_log_row(state, step, label, wrench))
            samples += 1
            result = controller.tick(view)
            if result.transition is not None:
                step_times[step.name] = state.t - step_started
                step_started = state.t
                if step <= StepId.INSERT:
                    if not logged:
                        label = _label(scene, board, state, label, config)
                    trace.record(state.t, label, int(step))
            if result.done:
                step_times[step.name] = state.t - step_started
                finished = True
                break
            for _ in range(config.steps_per_sample):
                state = quasi_static_step(state, result.command, config.DT, physics)
                monitor.record_step(state.solver_iterations)
    except TRIAL_FAILURES as e:
        failure = f"{type(e).__name__}: {e}"
        logging.warning(f"trial {scene.name} seed={seed} failed at t={state.t:.2f}s: {failure}")

    depth = engaged_depth(scene.peg, state.object_pose, board, config)
    report = check_path(trace, scene.peg.is_axisymmetric)
    inserted = depth >= 0.9 * scene.hole_depth
    if finished and not inserted:
        failure = f"insertion depth {depth / MM:.1f} mm short of {0.9 * scene.hole_depth / MM:.1f} mm"
    elif finished and not report.passed:
        failure = f"contact-formation path violated: {report.violation}"
    success = finished and failure is None
    if log_path is not None:
        write_log(log_path, rows)
    usage = monitor.get_summary()
    logging.info(f"trial {scene.name} seed={seed} {'succeeded' if success else 'failed'} "
                 f"in {state.t:.1f}s sim / {usage['wall_time_s']:.1f}s wall")
    return TrialResult(
        scenario=scene.name, seed=int(seed), success=success, failure_reason=failure,
        completion_time=float(state.t),
        explore_time=step_times.get(StepId.SEARCH.name, 0.0),
        insert_time=sum(step_times.get(s.name, 0.0) for s in INSERT_STEPS),
        step_times=step_times,
        trace=[(t, lab.name, s) for t, lab, s in trace.entries], path=report,
        slip=[float(v) for v in state.slip], final_depth=float(depth),
        wall_time=usage["wall_time_s"], peak_rss_mb=usage["peak_rss_mb"], samples=samples,
        pose_error=pose_error(scene.peg, board, state.object_pose),
        log_path=str(log_path) if log_path is not None else None,
    )


def pose_error(peg: Peg, board: HoleBoard, pose: Pose) -> Optional[Dict[str, float]]:
    """Final object pose against the hole: lateral offset, height above the bottom, yaw and tilt"""
    if not board.has_hole:
        return None
    bottom = pose.apply(np.array([0.0, 0.0, -peg.length]))
    order = peg.section.rotational_symmetry
    yaw = 0.0 if order == 0 else abs(wrap_angle(order * (pose.yaw - board.hole_yaw))) / order
    return {
        "lateral_m": float(np.linalg.norm(bottom[:2] - board.hole_position)),
        "axial_m": float(bottom[2] - board.bottom_height),
        "yaw_rad": float(yaw),
        "tilt_rad": float(pose.tilt),
    }


def run_plateau_experiment(scene: Scene, axis: str, speed: float, duration: float, trials: int,
                           seed: int = 0, config: SimConfig = DEFAULT_CONFIG) -> PlateauResult:
    """Mean and spread of the pusher force trace over repeated trials"""
    if trials < 1:
        raise ValueError("need at least one plateau trial")
    traces = []
    times = np.zeros(0)
    for child in np.random.SeedSequence(seed).spawn(trials):
        times, values = virtual_pusher(scene.grasp, axis, speed, duration, scene.peg, scene.sensor_noise,
                                       np.random.default_rng(child), config)
        traces.append(values)
    if not len(times):
        return PlateauResult(axis, times, times.copy(), times.copy(), float("nan"), float("nan"))
    stacked = np.vstack(traces)
    mean, std = stacked.mean(axis=0), stacked.std(axis=0)
    plateau = float(mean[times >= duration / 2.0].mean())
    return PlateauResult(axis, times, mean, std, plateau, _rise_r2(times, mean, plateau))


def _rise_r2(times: np.ndarray, mean: np.ndarray, plateau: float) -> float:
    """R^2 of a straight-line fit to the trace before it first reaches 90% of the plateau"""
    reached = np.flatnonzero(mean >= 0.9 * plateau)
    end = int(reached[0]) if len(reached) else len(mean)
    if end < 3:
        return float("nan")
    t, y = times[:end], mean[:end]
    fit = np.polyval(np.polyfit(t, y, 1), t)
    total = np.sum((y - y.mean()) ** 2)
    return float(1.0 - np.sum((y - fit) ** 2) / total) if total > 0 else float("nan")


def write_plateau_csv(result: PlateauResult, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t_s", "mean_N", "std_N"])
        for row in zip(result.times, result.mean, result.std):
            writer.writerow([f"{v:.9g}" for v in row])


def _suite_job(job: Tuple[str, Scene, int, Optional[str], Optional[ControllerConfig], SimConfig]) -> TrialResult:
    name, scene, seed, log_path, controller_config, config = job
    return run_trial(replace(scene, name=name), seed, log_path, controller_config, config)


def run_suite(suite: ScenarioSuite, seeds: Sequence[int], out_dir: Optional[Union[str, Path]] = None,
              workers: int = 1, controller_config: Optional[ControllerConfig] = None,
              config: SimConfig = DEFAULT_CONFIG) -> Dict:
    """Run every scenario for every seed and summarise; trials are independent"""
    out = Path(out_dir) if out_dir is not None else None
    jobs = []
    for name, scene in suite.scenarios:
        for seed in seeds:
            log_path = str(out / name / f"seed_{seed}.csv") if out is not None else None
            jobs.append((name, scene, int(seed), log_path, controller_config, config))
    logging.info(f"suite {suite.name}: {len(jobs)} trials on {workers} worker(s)")

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_suite_job, jobs))
    else:
        results = [_suite_job(job) for job in jobs]

    expectations = {name: scene.expected for name, scene in suite.scenarios}
    summary = suite_analytics.generate_suite_report(suite.name, results, expectations)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float))
        (out / "summary.txt").write_text(suite_analytics.format_table(summary))
    return summary
