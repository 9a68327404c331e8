"""Static equilibrium of the tendon-driven soft fingers against a compliant head.

Each finger is a pseudo-rigid-body chain: ``n_links`` rigid links joined by joints with two
orthogonal torsional springs (plane a about the local y axis, plane b about the local x axis).
Equilibrium minimises the total potential energy of joint springs, joint-limit springs, the
elastic series of the tendons and the penalty energy of the hair/scalp contact. The residual
is the energy gradient; it is driven to zero with damped Newton and energy backtracking.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, SolverError
from .models import FingerModel, RigidGripperModel, SolverSettings
from .types import (
    ContactPoint,
    FingerFrames,
    FingerState,
    HeadModel,
    RigidTransform,
    TendonState,
    Wrench,
)

logger = logging.getLogger(__name__)

ANGLE_CAP = np.pi / 2 - 1e-6
ARMIJO_C = 1e-4

Equilibrium = Tuple[List[FingerState], List[ContactPoint], TendonState]


def finger_mounts(model: FingerModel) -> List[RigidTransform]:
    """Finger base poses in the end-effector frame.

    Finger 0 sits at +x and is turned half a revolution about z, so on both fingers a
    positive plane-a angle bends the finger toward the other one.
    """
    flipped = RigidTransform(np.diag([-1.0, -1.0, 1.0]), np.array([model.mount_offset, 0.0, 0.0]))
    plain = RigidTransform(np.eye(3), np.array([-model.mount_offset, 0.0, 0.0]))
    return [flipped, plain]


def _rot_y(angle: np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(angle.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 2] = s
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = -s
    out[..., 2, 2] = c
    return out


def _rot_x(angle: np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(angle.shape + (3, 3))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = c
    out[..., 1, 2] = -s
    out[..., 2, 1] = s
    out[..., 2, 2] = c
    return out


def _chain(
    link_length: float, base: RigidTransform, a: np.ndarray, b: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batched chain kinematics; ``a`` and ``b`` are (batch, n_links).

    Returns points (batch, n+1, 3), link rotations (batch, n, 3, 3) and the world joint
    axes of both bending planes (batch, n, 3).
    """
    batch, n = a.shape
    ry = _rot_y(a)
    rx = _rot_x(b)
    points = np.empty((batch, n + 1, 3))
    rotations = np.empty((batch, n, 3, 3))
    axes_a = np.empty((batch, n, 3))
    axes_b = np.empty((batch, n, 3))
    rot = np.broadcast_to(base.rotation, (batch, 3, 3))
    pos = np.broadcast_to(base.translation, (batch, 3))
    points[:, 0] = pos
    for j in range(n):
        axes_a[:, j] = rot[:, :, 1]
        rot_a = rot @ ry[:, j]
        axes_b[:, j] = rot_a[:, :, 0]
        rot = rot_a @ rx[:, j]
        rotations[:, j] = rot
        pos = pos + link_length * rot[:, :, 2]
        points[:, j + 1] = pos
    return points, rotations, axes_a, axes_b


def _check_state(model: FingerModel, state: FingerState) -> None:
    if state.n_links != model.n_links:
        raise ContractViolation(
            f"finger state has {state.n_links} joints, model expects {model.n_links}"
        )


def forward_kinematics(model: FingerModel, state: FingerState) -> FingerFrames:
    _check_state(model, state)
    points, rotations, _, _ = _chain(
        model.link_length, state.base_pose, state.angles_a[None], state.angles_b[None]
    )
    return FingerFrames(points[0], rotations[0])


def _as_commands(commands: Sequence[float]) -> np.ndarray:
    arr = np.asarray(commands, dtype=float).reshape(-1)
    if arr.shape != (4,):
        raise ContractViolation(f"expected 4 actuator commands, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("actuator commands must be finite")
    return arr


def _tendon_pair(model: FingerModel, angle_sum, command: float):
    """Tensions of the positive and negative tendon of one actuator."""
    r = model.moment_arm
    ks = model.tendon_series_stiffness
    pos = ks * np.maximum(0.0, model.pretension + command - r * angle_sum)
    neg = ks * np.maximum(0.0, model.pretension - command + r * angle_sum)
    return pos, neg


def tendon_tensions(
    model: FingerModel, states: Sequence[FingerState], commands: Sequence[float]
) -> TendonState:
    cmd = _as_commands(commands)
    if len(states) != 2:
        raise ContractViolation(f"expected 2 finger states, got {len(states)}")
    tensions = np.empty(8)
    for i, state in enumerate(states):
        _check_state(model, state)
        for plane, angles in enumerate((state.angles_a, state.angles_b)):
            actuator = 2 * i + plane
            pos, neg = _tendon_pair(model, angles.sum(), cmd[actuator])
            tensions[2 * actuator] = pos
            tensions[2 * actuator + 1] = neg
    return TendonState(tensions, cmd)


def contact_law(head: HeadModel, penetration):
    """Normal force magnitude for a penetration past the hair surface."""
    d = np.maximum(np.asarray(penetration, dtype=float), 0.0)
    knee = head.k_hair * head.h_hair
    return np.where(d <= head.h_hair, head.k_hair * d, knee + head.k_scalp * (d - head.h_hair))


def contact_energy(head: HeadModel, penetration):
    d = np.maximum(np.asarray(penetration, dtype=float), 0.0)
    h = head.h_hair
    inside = d - h
    return np.where(
        d <= h,
        0.5 * head.k_hair * d**2,
        0.5 * head.k_hair * h**2 + head.k_hair * h * inside + 0.5 * head.k_scalp * inside**2,
    )


def _penetration(model: FingerModel, head: HeadModel, points: np.ndarray):
    rel = points - head.center
    dist = np.linalg.norm(rel, axis=-1)
    outward = rel / np.maximum(dist, 1e-12)[..., None]
    return head.outer_radius - (dist - model.radius), outward


class _FingerProblem:
    """Energy and residual of one finger; all evaluations are batched over rows of X."""

    def __init__(
        self,
        model: FingerModel,
        head: Optional[HeadModel],
        base: RigidTransform,
        cmd_a: float,
        cmd_b: float,
    ):
        self.model = model
        self.head = head
        self.base = base
        self.cmd_a = cmd_a
        self.cmd_b = cmd_b
        self.n = model.n_links

    def _excess(self, X: np.ndarray) -> np.ndarray:
        return np.sign(X) * np.maximum(0.0, np.abs(X) - self.model.joint_limit)

    def energy(self, X: np.ndarray) -> np.ndarray:
        m, n = self.model, self.n
        a, b = X[:, :n], X[:, n:]
        total = 0.5 * m.joint_stiffness * np.sum(X**2, axis=1)
        total += 0.5 * m.limit_stiffness * np.sum(self._excess(X) ** 2, axis=1)
        for angles, cmd in ((a, self.cmd_a), (b, self.cmd_b)):
            pos, neg = _tendon_pair(m, angles.sum(axis=1), cmd)
            total += (pos**2 + neg**2) / (2.0 * m.tendon_series_stiffness)
        if self.head is not None:
            points, _, _, _ = _chain(m.link_length, self.base, a, b)
            pen, _ = _penetration(m, self.head, points[:, 1:])
            total += np.sum(contact_energy(self.head, pen), axis=1)
        return total

    def residual(self, X: np.ndarray) -> np.ndarray:
        m, n = self.model, self.n
        a, b = X[:, :n], X[:, n:]
        grad = m.joint_stiffness * X + m.limit_stiffness * self._excess(X)
        for plane, (angles, cmd) in enumerate(((a, self.cmd_a), (b, self.cmd_b))):
            pos, neg = _tendon_pair(m, angles.sum(axis=1), cmd)
            grad[:, plane * n : (plane + 1) * n] -= (m.moment_arm * (pos - neg))[:, None]
        if self.head is not None:
            points, _, axes_a, axes_b = _chain(m.link_length, self.base, a, b)
            ends = points[:, 1:]
            pen, outward = _penetration(m, self.head, ends)
            force = contact_law(self.head, pen)[..., None] * outward
            # joint j moves every link end from j on
            f_tail = np.flip(np.cumsum(np.flip(force, 1), 1), 1)
            m_tail = np.flip(np.cumsum(np.flip(np.cross(ends, force), 1), 1), 1)
            moment = m_tail - np.cross(points[:, :-1], f_tail)
            grad[:, :n] -= np.einsum("bji,bji->bj", axes_a, moment)
            grad[:, n:] -= np.einsum("bji,bji->bj", axes_b, moment)
        return grad

    def jacobian(self, x: np.ndarray, step: float) -> np.ndarray:
        dim = x.shape[0]
        offsets = np.eye(dim) * step
        rows = self.residual(np.vstack([x + offsets, x - offsets]))
        jac = (rows[:dim] - rows[dim:]).T / (2.0 * step)
        return 0.5 * (jac + jac.T)


def _damped_direction(jac: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Newton direction with Levenberg damping until the system is positive definite."""
    dim = jac.shape[0]
    scale = max(1.0, float(np.max(np.abs(np.diag(jac)))))
    mu = 0.0
    while True:
        try:
            chol = np.linalg.cholesky(jac + mu * np.eye(dim))
            break
        except np.linalg.LinAlgError:
            mu = 1e-8 * scale if mu == 0.0 else mu * 4.0
    y = np.linalg.solve(chol, -grad)
    return np.linalg.solve(chol.T, y)


def _solve_finger(
    problem: _FingerProblem, settings: SolverSettings, x0: np.ndarray, finger: int
) -> np.ndarray:
    x = np.clip(x0.astype(float), -ANGLE_CAP, ANGLE_CAP)
    grad = problem.residual(x[None])[0]
    iteration = 0
    while True:
        res = float(np.max(np.abs(grad))) if grad.size else 0.0
        if res <= settings.tolerance:
            return x
        if iteration >= settings.max_iterations:
            raise SolverError(res, iteration, finger)
        iteration += 1

        direction = _damped_direction(problem.jacobian(x, settings.fd_step), grad)
        e0 = problem.energy(x[None])[0]
        slope = float(grad @ direction)
        t = 1.0
        candidate = None
        for _ in range(settings.max_halvings + 1):
            trial = np.clip(x + t * direction, -ANGLE_CAP, ANGLE_CAP)
            if problem.energy(trial[None])[0] <= e0 + ARMIJO_C * t * slope:
                candidate = trial
                break
            t *= 0.5
        if candidate is None:
            # energy differences drown in round-off near the minimum; take the step that
            # lowers the residual
            full = np.clip(x + direction, -ANGLE_CAP, ANGLE_CAP)
            trials = np.vstack([full, trial])
            norms = np.max(np.abs(problem.residual(trials)), axis=1)
            candidate = trials[int(np.argmin(norms))]
        x = candidate
        grad = problem.residual(x[None])[0]


def equilibrium_solve(
    model: FingerModel,
    commands: Sequence[float],
    head: Optional[HeadModel],
    base_pose: Optional[RigidTransform] = None,
    settings: Optional[SolverSettings] = None,
    initial: Optional[Sequence[FingerState]] = None,
) -> Equilibrium:
    """Solve both fingers for static equilibrium.

    ``base_pose`` is the end-effector pose in the world frame. ``initial`` warm-starts
    the iteration from previous finger states.
    """
    cmd = _as_commands(commands)
    base_pose = base_pose or RigidTransform.identity()
    settings = settings or SolverSettings()
    if head is not None and not np.all(np.isfinite(head.center)):
        raise ContractViolation("head center must be finite")

    states: List[FingerState] = []
    for i, mount in enumerate(finger_mounts(model)):
        base = base_pose.compose(mount)
        problem = _FingerProblem(model, head, base, cmd[2 * i], cmd[2 * i + 1])
        if initial is not None:
            _check_state(model, initial[i])
            x0 = initial[i].as_vector()
        else:
            x0 = np.zeros(2 * model.n_links)
        try:
            x = _solve_finger(problem, settings, x0, i)
        except SolverError as exc:
            logger.warning("equilibrium failed on finger %d: residual %.3e", i, exc.residual)
            raise
        states.append(FingerState(x[: model.n_links], x[model.n_links :], base))

    contacts = contact_forces(model, states, head) if head is not None else []
    return states, contacts, tendon_tensions(model, states, cmd)


def joint_residual(
    model: FingerModel,
    commands: Sequence[float],
    head: Optional[HeadModel],
    states: Sequence[FingerState],
) -> np.ndarray:
    """Torque residual (spring - tendon - contact) of both fingers, concatenated."""
    cmd = _as_commands(commands)
    parts = []
    for i, state in enumerate(states):
        _check_state(model, state)
        problem = _FingerProblem(model, head, state.base_pose, cmd[2 * i], cmd[2 * i + 1])
        parts.append(problem.residual(state.as_vector()[None])[0])
    return np.concatenate(parts)


def contact_forces(
    model: FingerModel, states: Sequence[FingerState], head: HeadModel
) -> List[ContactPoint]:
    """Penalty contacts at the distal end of every link; grazing (zero depth) is no contact."""
    contacts: List[ContactPoint] = []
    for finger, state in enumerate(states):
        ends = forward_kinematics(model, state).points[1:]
        pen, outward = _penetration(model, head, ends)
        for link in np.flatnonzero(pen > 0.0):
            normal = -outward[link]
            magnitude = float(contact_law(head, pen[link]))
            contacts.append(
                ContactPoint(
                    position=ends[link] + model.radius * normal,
                    normal=normal,
                    penetration=float(pen[link]),
                    force=magnitude * normal,
                    finger=finger,
                    link=int(link),
                )
            )
    return contacts


def finger_reactions(
    model: FingerModel, states: Sequence[FingerState], head: HeadModel
) -> np.ndarray:
    """Total contact force acting on the fingers, from the same kinematics as the solve."""
    total = np.zeros(3)
    for state in states:
        ends = forward_kinematics(model, state).points[1:]
        pen, outward = _penetration(model, head, ends)
        inside = pen > 0.0
        total += np.sum(contact_law(head, pen[inside])[:, None] * outward[inside], axis=0)
    return total


def head_wrench(contacts: Sequence[ContactPoint], head: HeadModel) -> Wrench:
    if not contacts:
        return Wrench.zero()
    forces = np.array([c.force for c in contacts])
    arms = np.array([c.position for c in contacts]) - head.center
    return Wrench(forces.sum(axis=0), np.cross(arms, forces).sum(axis=0))


def rigid_press(gripper: RigidGripperModel, head: HeadModel, commanded_depth: float) -> float:
    """Peak head force of a stiff fingertip pressed ``commanded_depth`` past first contact.

    The tip spring and the hair/scalp law act in series; the split of the displacement
    is solved per linear segment of the contact law.
    """
    if commanded_depth < 0:
        raise ContractViolation("commanded depth must be non-negative")
    kc, kh, ks, h = gripper.contact_stiffness, head.k_hair, head.k_scalp, head.h_hair
    hair = kc * commanded_depth / (kh + kc)
    if hair <= h:
        return float(kh * hair)
    hair = (kc * commanded_depth + (ks - kh) * h) / (ks + kc)
    return float(kh * h + ks * (hair - h))


def ee_pose_at(
    head: HeadModel, direction, distance: float, roll: float = 0.0, lateral=None
) -> RigidTransform:
    """End-effector pose pressing along ``direction``.

    The EE sits ``distance`` behind the head center along the approach axis, shifted by an
    optional ``lateral`` offset.
    """
    a = np.asarray(direction, dtype=float)
    a = a / np.linalg.norm(a)
    position = head.center - a * distance
    if lateral is not None:
        position = position + np.asarray(lateral, dtype=float)
    return RigidTransform.from_axis(a, position, roll)


def free_shape(
    model: FingerModel, commands: Sequence[float], settings: Optional[SolverSettings] = None
) -> List[FingerState]:
    states, _, _ = equilibrium_solve(model, commands, None, settings=settings)
    return states


def first_contact_distance(
    model: FingerModel,
    head: HeadModel,
    direction,
    commands: Sequence[float],
    roll: float = 0.0,
    settings: Optional[SolverSettings] = None,
    scan_step: float = 0.001,
    lateral=None,
) -> float:
    """Largest center-to-EE distance at which the free-space fingers touch the hair."""
    shape = free_shape(model, commands, settings)
    local = np.vstack([forward_kinematics(model, s).points[1:] for s in shape])
    frame = ee_pose_at(head, direction, 0.0, roll, lateral)
    rel = local @ frame.rotation.T + (frame.translation - head.center)
    axis = frame.rotation[:, 2]

    def gap(distance: float) -> float:
        dist = np.linalg.norm(rel - axis * distance, axis=1)
        return float(np.min(dist - model.radius) - head.outer_radius)

    far = head.outer_radius + model.length + model.mount_offset + model.radius + 0.05
    if lateral is not None:
        far += float(np.linalg.norm(lateral))
    hi = far
    if gap(hi) <= 0.0:
        raise ContractViolation("fingers start inside the hair layer")
    lo = hi - scan_step
    while gap(lo) > 0.0:
        hi = lo
        lo -= scan_step
        if lo < 0.0:
            raise ContractViolation("fingers never reach the hair along this direction")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if gap(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    return hi


@dataclass(frozen=True)
class PressResult:
    peak_force: float
    first_contact: float
    ee_pose: RigidTransform
    states: List[FingerState]
    contacts: List[ContactPoint]
    tendons: TendonState


def soft_press(
    model: FingerModel,
    head: HeadModel,
    depth: float,
    commands: Sequence[float],
    direction=(0.0, 0.0, -1.0),
    increment: float = 0.0005,
    settings: Optional[SolverSettings] = None,
) -> PressResult:
    """Press the soft fingers ``depth`` past first contact in small increments.

    The peak is taken over the whole ramp; each solve warm-starts from the previous one.
    """
    if depth < 0:
        raise ContractViolation("commanded depth must be non-negative")
    s0 = first_contact_distance(model, head, direction, commands, settings=settings)
    states = free_shape(model, commands, settings)
    n_steps = max(1, int(np.ceil(depth / increment - 1e-9)))
    peak = 0.0
    contacts: List[ContactPoint] = []
    tendons = tendon_tensions(model, states, commands)
    pose = ee_pose_at(head, direction, s0)
    for d in np.linspace(0.0, depth, n_steps + 1)[1:]:
        pose = ee_pose_at(head, direction, s0 - d)
        states, contacts, tendons = equilibrium_solve(
            model, commands, head, pose, settings, initial=states
        )
        peak = max(peak, float(np.linalg.norm(head_wrench(contacts, head).force)))
    return PressResult(peak, s0, pose, states, contacts, tendons)
