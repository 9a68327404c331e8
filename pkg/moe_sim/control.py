"""Force-feedback execution of the pat, comb and grasp skills."""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import ContractViolation, SolverError, TaskAbort
from .estimator import EstimatorParams, predict
from .mechanics import (
    ee_pose_at,
    equilibrium_solve,
    first_contact_distance,
    forward_kinematics,
    free_shape,
    head_wrench,
    soft_press,
)
from .models import (
    Approach,
    ControllerConfig,
    FeedbackMode,
    FingerModel,
    GlobalConfig,
    MechanicsConfig,
    RigidGripperModel,
    SolverSettings,
    TaskKind,
)
from .scene import observed_head_pose, scene_head
from .sensing import actuator_load, apply_mask, render
from .types import (
    ActuatorLoad,
    Demonstration,
    DepthFrame,
    FingerState,
    HeadModel,
    RigidTransform,
)

logger = logging.getLogger(__name__)

APPROACH_AXES = {
    Approach.TOP: np.array([0.0, 0.0, -1.0]),
    Approach.SIDE: np.array([0.0, 1.0, 0.0]),
}
OCTAGON = np.array([[math.cos(k * math.pi / 4), math.sin(k * math.pi / 4)] for k in range(8)])
TRACKING_BAND = 0.25
CALIBRATION_STEPS = 30
CLOSING_STEPS = 14


class ForceEstimator(Protocol):
    def predict(self, frame: DepthFrame, q: ActuatorLoad) -> np.ndarray: ...


class LearnedEstimator:
    """Adapter exposing trained parameters through the estimator protocol."""

    def __init__(self, params: EstimatorParams):
        self.params = params

    def predict(self, frame: DepthFrame, q: ActuatorLoad) -> np.ndarray:
        return predict(self.params, frame, q)


@dataclass
class PIState:
    integral: float = 0.0  # N*s
    output: float = 0.0  # accumulated depth correction [m]


def feedback_step(
    config: ControllerConfig,
    state: PIState,
    estimated_force,
    mode: FeedbackMode = FeedbackMode.FORCE_FEEDBACK,
) -> float:
    """Depth increment for one control tick from the estimated normal force.

    The PI output ``kp*e + ki*integral(e)`` is tracked in rate-limited steps of at most
    ``max_step``; the returned value is the step. Vision-only mode never moves.
    """
    if FeedbackMode(mode) is FeedbackMode.VISION_ONLY:
        return 0.0
    force = np.asarray(estimated_force, dtype=float).reshape(-1)
    if force.shape != (3,) or not np.all(np.isfinite(force)):
        raise ContractViolation("estimated force must be a finite 3-vector")
    error = config.target_force - force[2]
    integral = state.integral + error / config.rate
    if config.ki > 0:
        limit = config.integral_clamp / config.ki
        integral = float(np.clip(integral, -limit, limit))
    state.integral = integral
    desired = config.kp * error + config.ki * integral
    step = float(np.clip(desired - state.output, -config.max_step, config.max_step))
    state.output += step
    return step


@dataclass
class TaskSpec:
    kind: TaskKind
    approach: Optional[Approach] = None
    demonstration: Optional[Demonstration] = None
    pat_count: int = 3
    grasp_hold: float = 3.0

    def __post_init__(self):
        self.kind = TaskKind(self.kind)
        if self.approach is not None:
            self.approach = Approach(self.approach)
        if self.kind is TaskKind.COMB:
            if self.demonstration is None or len(self.demonstration) < 2:
                raise ContractViolation("comb needs a demonstration with at least 2 points")
        elif self.approach is None:
            raise ContractViolation(f"{self.kind.value} needs an approach (top or side)")
        if self.pat_count < 1:
            raise ContractViolation("pat count must be at least 1")
        if self.grasp_hold <= 0:
            raise ContractViolation("grasp hold must be positive")


@dataclass(frozen=True)
class TracePoint:
    t: float
    true_force: np.ndarray  # head force in the EE frame [N]
    estimated_force: np.ndarray
    depth_cmd: float  # metres past first contact
    phase: str
    window: int = -1  # contact window id; -1 outside intended contact

    @property
    def intended(self) -> bool:
        return self.window >= 0


@dataclass
class TaskResult:
    kind: TaskKind
    mode: FeedbackMode
    trace: List[TracePoint] = field(default_factory=list)
    metrics: Dict[str, Any] = field(default_factory=dict)
    aborted: bool = False
    strand_count: Optional[int] = None

    @property
    def duration(self) -> float:
        return self.trace[-1].t - self.trace[0].t if self.trace else 0.0


def contact_windows(trace: Sequence[TracePoint], threshold: float) -> List[Tuple[int, int]]:
    """Index ranges [start, stop) where the true force magnitude stays above ``threshold``."""
    windows, start = [], None
    for i, point in enumerate(trace):
        above = float(np.linalg.norm(point.true_force)) > threshold
        if above and start is None:
            start = i
        elif not above and start is not None:
            windows.append((start, i))
            start = None
    if start is not None:
        windows.append((start, len(trace)))
    return windows


def task_metrics(
    trace: Sequence[TracePoint], config: ControllerConfig, kind: TaskKind, mode: FeedbackMode
) -> Dict[str, Any]:
    magnitudes = np.array([np.linalg.norm(p.true_force) for p in trace]) if trace else np.zeros(0)
    intended = [p for p in trace if p.intended]
    normals = np.array([p.true_force[2] for p in intended])
    starts: Dict[int, float] = {}
    for p in intended:
        starts.setdefault(p.window, p.t)
    settled = np.array(
        [
            p.true_force[2]
            for p in intended
            if p.t - starts[p.window] >= config.settle_window - 1e-9
        ]
    )
    in_contact = np.array([np.linalg.norm(p.true_force) > config.contact_threshold for p in intended])
    return {
        "task": kind.value,
        "mode": mode.value,
        "duration_s": trace[-1].t - trace[0].t if trace else 0.0,
        "max_true_force_N": float(magnitudes.max()) if magnitudes.size else 0.0,
        "contact_ratio": float(in_contact.mean()) if in_contact.size else 0.0,
        "mean_force_deviation_N": (
            float(np.mean(np.abs(normals - config.target_force))) if normals.size else 0.0
        ),
        "tracking_ratio": (
            float(np.mean(np.abs(settled - config.target_force) <= TRACKING_BAND))
            if settled.size
            else 0.0
        ),
        "contact_episodes": len(contact_windows(trace, config.contact_threshold)),
    }


def _project(points: np.ndarray, head: HeadModel, rotation: np.ndarray) -> np.ndarray:
    """Radial projection onto the scalp tangent plane at the grasp site, in plane coordinates.

    Points behind the head center (seen from the grasp site) are dropped.
    """
    rel = np.asarray(points, dtype=float).reshape(-1, 3) - head.center
    inward = rotation[:, 2]
    height = rel @ -inward
    front = height > 1e-9
    ex, ey = rotation[:, 0], rotation[:, 1]
    planar = np.column_stack([rel[front] @ ex, rel[front] @ ey])
    return head.radius * planar / height[front, None]


def count_enclosed_strands(
    head: HeadModel, rotation: np.ndarray, points: np.ndarray, finger_radius: float
) -> int:
    """Number of strand anchors inside the projected hull of the finger sample points."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if points.shape[0] == 0 or head.strand_anchors.shape[0] == 0:
        return 0
    region = _project(points, head, rotation)
    if region.shape[0] == 0:
        return 0
    region = (region[:, None, :] + finger_radius * OCTAGON[None]).reshape(-1, 2)
    anchors = _project(head.strand_anchors, head, rotation)
    if anchors.shape[0] == 0:
        return 0
    try:
        hull = Delaunay(region)
    except QhullError:
        return 0
    return int(np.count_nonzero(hull.find_simplex(anchors) >= 0))


class StrandTracker:
    """Collects in-hair finger sample points and the fingertip gap over a closing sweep."""

    def __init__(self, model: FingerModel, head: HeadModel, rotation: np.ndarray, tolerance: float):
        self.model = model
        self.head = head
        self.rotation = rotation
        self.tolerance = tolerance
        self.points: List[np.ndarray] = []
        self.min_tip_gap = math.inf

    def add(self, states: Sequence[FingerState], head: Optional[HeadModel] = None) -> None:
        head = head or self.head
        frames = [forward_kinematics(self.model, s) for s in states]
        ends = np.vstack([f.points[1:] for f in frames])
        gap = np.linalg.norm(ends - head.center, axis=1) - self.model.radius - head.outer_radius
        # stored relative to the tracked head so that head motion does not smear the region
        self.points.append(ends[gap < 0.0] - head.center + self.head.center)
        self.min_tip_gap = min(self.min_tip_gap, float(np.linalg.norm(frames[0].tip - frames[1].tip)))

    @property
    def closed(self) -> bool:
        return self.min_tip_gap <= 2.0 * self.model.radius + self.tolerance

    def count(self) -> int:
        if not self.closed or not self.points:
            return 0
        return count_enclosed_strands(
            self.head, self.rotation, np.vstack(self.points), self.model.radius
        )


def _grasp_commands(value: float) -> np.ndarray:
    return np.array([value, 0.0, value, 0.0])


def grasp_strands(
    mechanics: MechanicsConfig, head: HeadModel, depth: float, direction=(0.0, 0.0, -1.0)
) -> Tuple[float, int]:
    """Open-press-close grasp of the soft fingers: (peak press force, strand count).

    While the fingers close, the hand backs off along the approach axis so that the normal
    force stays at the peak of the open press.
    """
    press, finger, solver = mechanics.press, mechanics.finger, mechanics.solver
    a = np.asarray(direction, dtype=float)
    a = a / np.linalg.norm(a)
    result = soft_press(
        finger, head, depth, _grasp_commands(press.open_command), a,
        press.depth_increment, solver,
    )
    if depth <= 0 or result.peak_force <= 0.0:
        return result.peak_force, 0
    tracker = StrandTracker(finger, head, result.ee_pose.rotation, press.closure_tolerance)
    tracker.add(result.states)
    states = result.states
    for c in np.linspace(press.open_command, press.close_command, press.close_steps + 1)[1:]:
        commands = _grasp_commands(float(c))
        s0, knot_depth = calibrate_depth(
            finger, head, a, commands, result.peak_force, press.max_depth, solver,
            press.depth_increment, steps=CLOSING_STEPS,
        )
        pose = ee_pose_at(head, a, s0 - knot_depth)
        states, _, _ = equilibrium_solve(finger, commands, head, pose, solver, initial=states)
        tracker.add(states)
    return result.peak_force, tracker.count()


def rigid_strands(
    gripper: RigidGripperModel, head: HeadModel, depth: float, direction=(0.0, 0.0, -1.0)
) -> int:
    """Strands swept by two stiff parallel jaws pressed ``depth`` past first hair contact.

    The jaw tips touch the hair surface at zero depth; every jaw point inside the hair layer
    between the two jaws counts as enclosed once they close.
    """
    if depth <= 0:
        return 0
    a = np.asarray(direction, dtype=float)
    a = a / np.linalg.norm(a)
    frame = RigidTransform.from_axis(a, head.center)
    half = 0.5 * gripper.jaw_separation
    reach = head.outer_radius + gripper.jaw_radius
    tip_height = math.sqrt(max(reach**2 - half**2, 0.0)) - depth
    heights = tip_height + np.linspace(0.0, gripper.finger_length, 21)
    lateral = np.linspace(-half, half, 11)
    points = (
        head.center
        - a * heights[:, None, None]
        + lateral[None, :, None] * frame.rotation[:, 0]
    ).reshape(-1, 3)
    inside = np.linalg.norm(points - head.center, axis=1) - gripper.jaw_radius < head.outer_radius
    return count_enclosed_strands(head, frame.rotation, points[inside], gripper.jaw_radius)


def calibrate_depth(
    model: FingerModel,
    head: HeadModel,
    direction,
    commands: Sequence[float],
    target: float,
    max_depth: float,
    settings: Optional[SolverSettings] = None,
    increment: float = 0.0005,
    steps: int = CALIBRATION_STEPS,
) -> Tuple[float, float]:
    """First-contact distance and the depth at which the normal force equals ``target``.

    The depth is ramped with warm starts until the force brackets the target, then bisected
    ``steps`` times.
    """
    axis = np.asarray(direction, dtype=float)
    axis = axis / np.linalg.norm(axis)
    s0 = first_contact_distance(model, head, axis, commands, settings=settings)
    states = free_shape(model, commands, settings)

    def normal_force(depth: float, initial) -> Tuple[float, List[FingerState]]:
        pose = RigidTransform.from_axis(axis, head.center - axis * (s0 - depth))
        solved, contacts, _ = equilibrium_solve(model, commands, head, pose, settings, initial)
        return float((pose.rotation.T @ head_wrench(contacts, head).force)[2]), solved

    lo, lo_states = 0.0, states
    hi = None
    for depth in np.arange(increment, max_depth + 0.5 * increment, increment):
        force, solved = normal_force(float(depth), lo_states)
        if force >= target:
            hi = float(depth)
            break
        lo, lo_states = float(depth), solved
    if hi is None:
        logger.warning("target force %.2f N not reached within %.1f mm", target, 1e3 * max_depth)
        return s0, max_depth
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        force, _ = normal_force(mid, lo_states)
        if force >= target:
            hi = mid
        else:
            lo = mid
    return s0, 0.5 * (lo + hi)


def task_head(config: GlobalConfig, wig: Optional[str] = None) -> HeadModel:
    """Head a task runs against: the named wig, else the one the sampler collects on."""
    return scene_head(config.scene, wig or config.sampler.wig)


class TaskRunner:
    """Simulated control loop: one equilibrium solve (plus sensing and estimation) per tick."""

    def __init__(
        self,
        spec: TaskSpec,
        mode: FeedbackMode,
        config: GlobalConfig,
        estimator: Optional[ForceEstimator] = None,
        seed: Optional[int] = None,
        wig: Optional[str] = None,
    ):
        self.spec = spec
        self.mode = FeedbackMode(mode)
        if self.mode is FeedbackMode.FORCE_FEEDBACK and estimator is None:
            raise ContractViolation("force-feedback mode needs a trained estimator")
        self.config = config
        self.ctrl = config.controller
        self.estimator = estimator
        self.seed = self.ctrl.seed if seed is None else seed
        self.head = task_head(config, wig)
        self.finger = config.mechanics.finger
        self.solver = config.mechanics.solver
        self.dt = 1.0 / self.ctrl.rate
        self.tick = 0
        self.window = -1
        self.trace: List[TracePoint] = []
        self.states: Optional[List[FingerState]] = None
        self.last_true_force = np.zeros(3)
        self.last_pose: Optional[RigidTransform] = None
        self.last_head: HeadModel = self.head
        self.pi = PIState()
        self.s0 = 0.0
        self.nominal_depth = 0.0
        self.tracker: Optional[StrandTracker] = None
        self.strand_count: Optional[int] = None

    @property
    def force_feedback(self) -> bool:
        return self.mode is FeedbackMode.FORCE_FEEDBACK

    def step(self, depth: float, direction, commands, phase: str) -> np.ndarray:
        """Advance one tick at the commanded depth; returns the force estimate."""
        t = self.tick * self.dt
        obs = observed_head_pose(self.config.scene.pose, t, self.seed)
        head = self.head.moved(obs.true)
        center = self.head.center + obs.observed
        a = np.asarray(direction, dtype=float)
        pose = RigidTransform.from_axis(a, center - a * (self.s0 - depth))
        states, contacts, tendons = equilibrium_solve(
            self.finger, commands, head, pose, self.solver, initial=self.states
        )
        self.states, self.last_pose, self.last_head = states, pose, head
        self.last_true_force = pose.rotation.T @ head_wrench(contacts, head).force
        estimate = np.zeros(3)
        if self.force_feedback:
            frame, mask = render(
                self.config.camera, self.finger, states, head, pose, seed=[self.seed, self.tick, 1]
            )
            q = actuator_load(tendons, self.config.current_model, seed=[self.seed, self.tick, 2])
            estimate = np.asarray(self.estimator.predict(apply_mask(frame, mask), q), dtype=float)
        self.trace.append(
            TracePoint(t, self.last_true_force.copy(), estimate, float(depth), phase, self.window)
        )
        self.tick += 1
        return estimate

    def approach(self, direction_at: Callable[[float], np.ndarray], commands) -> float:
        """Advance from the standoff; returns the depth where the hold starts."""
        depth = -self.ctrl.standoff
        limit = self.ctrl.max_depth if self.force_feedback else self.nominal_depth
        advance = self.ctrl.approach_speed * self.dt
        while True:
            estimate = self.step(depth, direction_at(0.0), commands, "approach")
            if self.force_feedback and estimate[2] >= self.ctrl.target_force:
                return depth
            if depth >= limit:
                return limit
            depth = min(limit, depth + advance)

    def hold(
        self,
        base: float,
        duration: float,
        direction_at: Callable[[float], np.ndarray],
        commands_at: Callable[[float], np.ndarray],
        phase: str,
        offset_at: Optional[Callable[[float], float]] = None,
    ) -> float:
        """Intended-contact window; returns the last commanded depth.

        ``offset_at`` shifts the base depth over the window (the closing schedule of a grasp).
        """
        depth = base
        for i in range(max(1, int(round(duration * self.ctrl.rate)))):
            tau = i * self.dt
            offset = offset_at(tau) if offset_at is not None else 0.0
            depth = min(self.ctrl.max_depth, base + offset + self.pi.output)
            estimate = self.step(depth, direction_at(tau), commands_at(tau), phase)
            if self.tracker is not None:
                self.tracker.add(self.states, self.last_head)
            feedback_step(self.ctrl, self.pi, estimate, self.mode)
        return depth

    def retreat(self, start: float, direction, commands) -> None:
        n = max(1, int(round(self.ctrl.retreat_time * self.ctrl.rate)))
        for depth in np.linspace(start, -self.ctrl.standoff, n + 1)[1:]:
            self.step(float(depth), direction, commands, "retreat")

    def _contact_window(self) -> None:
        self.window += 1
        self.pi = PIState()

    def _calibrate(self, direction, commands) -> None:
        self.s0, self.nominal_depth = calibrate_depth(
            self.finger, self.head, direction, commands, self.ctrl.target_force,
            self.ctrl.max_depth, self.solver, self.config.mechanics.press.depth_increment,
        )
        logger.debug(
            "first contact at %.1f mm, nominal depth %.2f mm",
            1e3 * self.s0, 1e3 * self.nominal_depth,
        )

    def _pat(self) -> None:
        a = APPROACH_AXES[self.spec.approach]
        commands = _grasp_commands(self.ctrl.pat_command)
        self._calibrate(a, commands)
        for _ in range(self.spec.pat_count):
            self.window = -1
            base = self.approach(lambda tau: a, commands)
            self._contact_window()
            depth = self.hold(base, self.ctrl.pat_hold, lambda tau: a, lambda tau: commands, "hold")
            self.window = -1
            self.retreat(depth, a, commands)

    def _comb(self) -> None:
        demo = self.spec.demonstration
        times = demo.times - demo.times[0]

        def direction_at(tau: float) -> np.ndarray:
            point = np.array([np.interp(tau, times, demo.points[:, k]) for k in range(3)])
            inward = self.head.center - point
            return inward / np.linalg.norm(inward)

        commands = _grasp_commands(self.ctrl.pat_command)
        self._calibrate(direction_at(0.0), commands)
        base = self.approach(direction_at, commands)
        self._contact_window()
        duration = demo.duration + self.dt
        depth = self.hold(base, duration, direction_at, lambda tau: commands, "stroke")
        self.window = -1
        self.retreat(depth, direction_at(demo.duration), commands)

    def _closing_offsets(self, direction, knots: np.ndarray) -> np.ndarray:
        """Depth change, per closing knot, that keeps the nominal force of the open grasp."""
        press = self.config.mechanics.press
        offsets = [0.0]
        for c in knots[1:]:
            s0, depth = calibrate_depth(
                self.finger, self.head, direction, _grasp_commands(float(c)),
                self.ctrl.target_force, self.ctrl.max_depth, self.solver, press.depth_increment,
                steps=CLOSING_STEPS,
            )
            offsets.append(self.s0 - s0 + depth - self.nominal_depth)
        return np.asarray(offsets)

    def _grasp(self) -> None:
        a = APPROACH_AXES[self.spec.approach]
        knots = np.linspace(
            self.ctrl.grasp_open_command, self.ctrl.grasp_close_command,
            self.config.mechanics.press.close_steps + 1,
        )
        open_cmd = _grasp_commands(self.ctrl.grasp_open_command)
        close_cmd = _grasp_commands(self.ctrl.grasp_close_command)
        self._calibrate(a, open_cmd)
        offsets = self._closing_offsets(a, knots)
        base = self.approach(lambda tau: a, open_cmd)
        self._contact_window()
        self.tracker = StrandTracker(
            self.finger, self.last_head, self.last_pose.rotation,
            self.config.mechanics.press.closure_tolerance,
        )
        last = len(knots) - 1

        def knot(tau: float) -> int:
            return min(last, 1 + int(tau * last / self.ctrl.grasp_close_time))

        depth = self.hold(
            base, self.ctrl.grasp_close_time + self.dt, lambda tau: a,
            lambda tau: _grasp_commands(float(knots[knot(tau)])), "close",
            offset_at=lambda tau: float(offsets[knot(tau)]),
        )
        tracker, self.tracker = self.tracker, None
        depth = self.hold(
            base, self.spec.grasp_hold, lambda tau: a, lambda tau: close_cmd, "hold",
            offset_at=lambda tau: float(offsets[-1]),
        )
        self.window = -1
        self.retreat(depth, a, close_cmd)
        self.strand_count = tracker.count()

    def run(self) -> TaskResult:
        schedule = {TaskKind.PAT: self._pat, TaskKind.COMB: self._comb, TaskKind.GRASP: self._grasp}
        try:
            schedule[self.spec.kind]()
        except SolverError as exc:
            result = self.result(aborted=True)
            logger.error("%s task aborted at t=%.2f s: %s", self.spec.kind.value, result.duration, exc)
            raise TaskAbort(result, exc) from exc
        return self.result()

    def result(self, aborted: bool = False) -> TaskResult:
        metrics = task_metrics(self.trace, self.ctrl, self.spec.kind, self.mode)
        metrics["aborted"] = aborted
        strands = self.strand_count
        if self.spec.kind is TaskKind.GRASP:
            metrics["strand_count"] = strands
        return TaskResult(self.spec.kind, self.mode, list(self.trace), metrics, aborted, strands)


def run_task(
    spec: TaskSpec,
    mode: FeedbackMode,
    config: GlobalConfig,
    estimator: Optional[ForceEstimator] = None,
    seed: Optional[int] = None,
    wig: Optional[str] = None,
) -> TaskResult:
    """Execute one task; raises TaskAbort with the partial result if a solve fails."""
    return TaskRunner(spec, mode, config, estimator, seed, wig).run()


def grasp_sequence(
    config: GlobalConfig,
    mode: FeedbackMode,
    estimator: Optional[ForceEstimator] = None,
    approach: Approach = Approach.TOP,
    seed: Optional[int] = None,
    wig: Optional[str] = None,
) -> Tuple[int, TaskResult]:
    spec = TaskSpec(TaskKind.GRASP, approach, grasp_hold=config.controller.grasp_hold)
    result = run_task(spec, mode, config, estimator, seed, wig)
    return result.strand_count or 0, result
