"""Head model, synthetic head tracker and synthetic demonstrations."""

import math
from typing import Optional

import numpy as np

from .errors import ContractViolation
from .models import DemoStyle, HeadConfig, HeadPoseProvider, PoseMode, SceneConfig
from .types import Demonstration, HeadModel, PoseObservation


def make_head(config: HeadConfig, wig=None) -> HeadModel:
    """Build the head, optionally with a wig preset overriding the hair layer.

    Strand anchors are uniformly distributed on the scalp sphere from ``anchor_seed``.
    """
    h_hair = wig.h_hair if wig is not None else config.h_hair
    k_hair = wig.k_hair if wig is not None else config.k_hair
    rng = np.random.default_rng(config.anchor_seed)
    directions = rng.normal(size=(config.n_anchors, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    center = np.asarray(config.center, dtype=float)
    return HeadModel(
        center=center,
        radius=config.radius,
        h_hair=h_hair,
        k_hair=k_hair,
        k_scalp=config.k_scalp,
        strand_anchors=center + config.radius * directions,
    )


def scene_head(scene: SceneConfig, wig_name: Optional[str] = None) -> HeadModel:
    try:
        wig = scene.wig(wig_name) if wig_name else None
    except KeyError as exc:
        raise ContractViolation(f"unknown wig preset {wig_name!r}") from exc
    return make_head(scene.head, wig)


def surface_gap(head: HeadModel, point) -> float:
    """Signed distance to the outer hair surface; negative inside."""
    p = np.asarray(point, dtype=float)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise ContractViolation("point must be a finite 3-vector")
    return float(np.linalg.norm(p - head.center) - head.outer_radius)


def _walk(provider: HeadPoseProvider, tick: int, seed: int) -> np.ndarray:
    if tick <= 0:
        return np.zeros(3)
    steps = np.random.default_rng(seed).normal(0.0, provider.step_sigma, size=(tick, 3))
    pos = np.zeros(3)
    for step in steps:
        pos = np.clip(pos + step, -provider.amplitude, provider.amplitude)
    return pos


def true_head_offset(provider: HeadPoseProvider, t: float, seed: int = 0) -> np.ndarray:
    """Head displacement from its nominal position at time ``t``."""
    if provider.mode is PoseMode.STATIC:
        return np.zeros(3)
    if provider.mode is PoseMode.SINUSOIDAL:
        axis = np.asarray(provider.axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        return provider.amplitude * math.sin(2.0 * math.pi * t / provider.period) * axis
    # random walk advances once per tracker tick
    return _walk(provider, _tick(provider.rate, t), seed)


def _tick(rate: float, t: float) -> int:
    return max(0, int(math.floor(t * rate + 1e-9)))


def observed_head_pose(provider: HeadPoseProvider, t: float, seed: int = 0) -> PoseObservation:
    """Tracker output at time ``t``: the latest tick's noisy sample, held between ticks."""
    if t < 0:
        raise ContractViolation("time must be non-negative")
    tick = _tick(provider.rate, max(0.0, t - provider.latency))
    sampled_at = tick / provider.rate
    observed = true_head_offset(provider, sampled_at, seed)
    if provider.noise_sigma > 0:
        noise_rng = np.random.default_rng([seed, tick])
        observed = observed + noise_rng.normal(0.0, provider.noise_sigma, size=3)
    return PoseObservation(
        t=t, tick=tick, observed=observed, true=true_head_offset(provider, t, seed)
    )


def synth_demonstration(
    head: HeadModel,
    style: DemoStyle,
    duration: float,
    seed: int = 0,
    rate: float = 12.5,
) -> Demonstration:
    """Hand keypoints sweeping over the crown, inside the hair layer."""
    if duration <= 0:
        raise ContractViolation("duration must be positive")
    style = DemoStyle(style)
    n = max(2, int(round(duration * rate)))
    rng = np.random.default_rng(seed)
    s = np.linspace(0.0, 1.0, n)
    azimuth0 = rng.uniform(-math.pi, math.pi)
    if style is DemoStyle.ARC:
        polar = np.radians(rng.uniform(40.0, 55.0)) * (2.0 * s - 1.0)
        azimuth = np.full(n, azimuth0)
    else:
        sweeps = int(rng.integers(3, 6))
        polar = np.radians(40.0) * (2.0 * s - 1.0)
        triangle = 2.0 * np.abs((s * sweeps) % 2.0 - 1.0) - 1.0
        azimuth = azimuth0 + np.radians(25.0) * triangle
    # signed polar: points cross the crown from one side to the other
    direction = np.column_stack(
        [
            np.sin(polar) * np.cos(azimuth),
            np.sin(polar) * np.sin(azimuth),
            np.cos(polar),
        ]
    )
    band = 0.25 * head.h_hair
    jitter = 0.1 * head.h_hair * np.sin(2.0 * math.pi * s * rng.uniform(0.5, 1.5))
    points = head.center + (head.radius + band + jitter)[:, None] * direction
    return Demonstration(np.arange(n) / rate, points)
