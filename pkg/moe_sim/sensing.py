"""Wrist-camera depth rendering, finger masks and the actuator current-load model."""

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .errors import ContractViolation
from .mechanics import forward_kinematics
from .models import CameraModel, CurrentModel, FingerModel, MaskCorruption
from .types import ActuatorLoad, DepthFrame, FingerState, HeadModel, Mask, RigidTransform, TendonState

_EPS = 1e-12

# an int or a spawn key such as [seed, tick, stream]
Seed = Optional[Union[int, Sequence[int]]]


def camera_pose(camera: CameraModel, ee_pose: RigidTransform) -> RigidTransform:
    mount = RigidTransform.from_rotvec(camera.mount_rotvec, camera.mount_translation)
    return ee_pose.compose(mount)


def pixel_rays(camera: CameraModel) -> np.ndarray:
    """Camera-frame ray directions with unit z, so the ray parameter is the depth."""
    v, u = np.mgrid[0 : camera.height, 0 : camera.width]
    rays = np.empty((camera.height * camera.width, 3))
    rays[:, 0] = ((u - camera.cx) / camera.fx).ravel()
    rays[:, 1] = ((v - camera.cy) / camera.fy).ravel()
    rays[:, 2] = 1.0
    return rays


def _sphere_hits(origin, dirs, centers, radius) -> np.ndarray:
    """Nearest positive ray parameter per (ray, sphere); inf on a miss."""
    oc = origin - centers  # (K, 3)
    a = np.einsum("pi,pi->p", dirs, dirs)[:, None]
    b = dirs @ oc.T
    c = np.einsum("ki,ki->k", oc, oc)[None, :] - radius**2
    disc = b * b - a * c
    with np.errstate(invalid="ignore"):
        t = (-b - np.sqrt(disc)) / a
    return np.where((disc >= 0.0) & (t > 0.0), t, np.inf)


def _cylinder_hits(origin, dirs, starts, ends, radius) -> np.ndarray:
    """Ray hits on the lateral surface of finite cylinders; inf on a miss."""
    axis = ends - starts
    length = np.linalg.norm(axis, axis=1)
    e = axis / np.maximum(length, _EPS)[:, None]
    de = dirs @ e.T  # (P, K)
    d_perp = dirs[:, None, :] - de[..., None] * e[None]
    w = origin - starts
    we = np.einsum("ki,ki->k", w, e)
    w_perp = w - we[:, None] * e
    a = np.einsum("pki,pki->pk", d_perp, d_perp)
    b = np.einsum("pki,ki->pk", d_perp, w_perp)
    c = np.einsum("ki,ki->k", w_perp, w_perp)[None, :] - radius**2
    disc = b * b - a * c
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (-b - np.sqrt(disc)) / a
    s = we[None, :] + t * de
    hit = (a > _EPS) & (disc >= 0.0) & (t > 0.0) & (s >= 0.0) & (s <= length[None, :])
    return np.where(hit, t, np.inf)


def cast_capsules(
    camera: CameraModel,
    cam_pose: RigidTransform,
    segments: np.ndarray,
    radius: float,
    head: Optional[HeadModel] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel depth (metres, inf on miss) of the nearest hit and whether it is a capsule."""
    rays = pixel_rays(camera) @ cam_pose.rotation.T
    origin = cam_pose.translation
    finger_t = np.full(rays.shape[0], np.inf)
    if len(segments):
        segments = np.asarray(segments, dtype=float).reshape(-1, 2, 3)
        caps = np.vstack([segments[:, 0], segments[:, 1]])
        finger_t = np.minimum(
            _cylinder_hits(origin, rays, segments[:, 0], segments[:, 1], radius).min(axis=1),
            _sphere_hits(origin, rays, caps, radius).min(axis=1),
        )
    head_t = np.full(rays.shape[0], np.inf)
    if head is not None:
        head_t = _sphere_hits(origin, rays, head.center[None], head.outer_radius)[:, 0]
    depth = np.minimum(finger_t, head_t)
    is_finger = np.isfinite(finger_t) & (finger_t <= head_t)
    shape = (camera.height, camera.width)
    return depth.reshape(shape), is_finger.reshape(shape)


def finger_segments(model: FingerModel, states: Sequence[FingerState]) -> np.ndarray:
    segments = []
    for state in states:
        points = forward_kinematics(model, state).points
        segments.append(np.stack([points[:-1], points[1:]], axis=1))
    return np.concatenate(segments) if segments else np.zeros((0, 2, 3))


def quantize_depth(
    camera: CameraModel, depth_m: np.ndarray, noise_mm: float = 0.0, seed: Seed = None
) -> DepthFrame:
    mm = depth_m * 1000.0
    if noise_mm > 0:
        mm = mm + np.random.default_rng(seed).normal(0.0, noise_mm, size=mm.shape)
    with np.errstate(invalid="ignore"):
        mm = np.rint(mm)
    valid = np.isfinite(mm) & (mm >= camera.min_range_mm) & (mm <= camera.max_range_mm)
    return DepthFrame(np.where(valid, mm, 0.0).astype("<u2"))


def render(
    camera: CameraModel,
    model: FingerModel,
    states: Sequence[FingerState],
    head: Optional[HeadModel],
    ee_pose: RigidTransform,
    seed: Seed = None,
    noise_mm: Optional[float] = None,
) -> Tuple[DepthFrame, Mask]:
    """Depth frame and finger mask from one ray cast."""
    depth, is_finger = cast_capsules(
        camera, camera_pose(camera, ee_pose), finger_segments(model, states), model.radius, head
    )
    noise = camera.depth_noise_mm if noise_mm is None else noise_mm
    return quantize_depth(camera, depth, noise, seed), Mask(is_finger)


def render_depth(
    camera: CameraModel,
    model: FingerModel,
    states: Sequence[FingerState],
    head: Optional[HeadModel],
    ee_pose: RigidTransform,
    seed: Seed = None,
    noise_mm: Optional[float] = None,
) -> DepthFrame:
    return render(camera, model, states, head, ee_pose, seed, noise_mm)[0]


def finger_mask(
    camera: CameraModel,
    model: FingerModel,
    states: Sequence[FingerState],
    head: Optional[HeadModel],
    ee_pose: RigidTransform,
) -> Mask:
    """Bit set where the nearest hit along the pixel ray is a finger."""
    return render(camera, model, states, head, ee_pose, noise_mm=0.0)[1]


def apply_mask(frame: DepthFrame, mask: Mask) -> DepthFrame:
    if frame.shape != mask.shape:
        raise ContractViolation(f"frame {frame.shape} and mask {mask.shape} differ in shape")
    return DepthFrame(frame.depth * mask.bits, masked=True)


def corrupt_mask(
    mask: Mask, mode: MaskCorruption, magnitude: float, seed: Seed = None
) -> Mask:
    """Perturb a mask: dilate/erode by a pixel radius, or flip a fraction of bits."""
    if magnitude < 0:
        raise ContractViolation("corruption magnitude must be non-negative")
    mode = MaskCorruption(mode)
    bits = mask.bits
    if mode is MaskCorruption.FLIP:
        if magnitude > 1:
            raise ContractViolation("flip fraction must be at most 1")
        count = int(round(magnitude * bits.size))
        if count == 0:
            return Mask(bits.copy())
        chosen = np.random.default_rng(seed).choice(bits.size, size=count, replace=False)
        flat = bits.ravel().copy()
        flat[chosen] = ~flat[chosen]
        return Mask(flat.reshape(bits.shape))
    radius = int(round(magnitude))
    if radius == 0:
        return Mask(bits.copy())
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    if mode is MaskCorruption.DILATE:
        return Mask(ndimage.binary_dilation(bits, structure=structure))
    return Mask(ndimage.binary_erosion(bits, structure=structure))


def actuator_load(
    tendons: TendonState, model: CurrentModel, seed: Seed = None
) -> ActuatorLoad:
    """Current load per actuator from the net tension of its tendon pair."""
    tensions = np.asarray(tendons.tensions, dtype=float)
    if tensions.shape != (8,) or np.any(tensions < 0):
        raise ContractViolation("expected 8 non-negative tendon tensions")
    net = np.maximum(0.0, tensions.reshape(4, 2).sum(axis=1) - model.deadband)
    q = net / model.k_s
    if model.noise_sigma > 0:
        q = q + np.random.default_rng(seed).normal(0.0, model.noise_sigma, size=4)
    return ActuatorLoad(np.maximum(q, 0.0))
