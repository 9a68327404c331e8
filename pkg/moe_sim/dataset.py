"""Self-labelling data collection against the simulated force-sensing head."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CollectionError, ContractViolation, SolverError
from .mechanics import ee_pose_at, equilibrium_solve, first_contact_distance, head_wrench
from .models import CameraModel, CurrentModel, MechanicsConfig, SamplerConfig, SceneConfig
from .scene import scene_head
from .sensing import actuator_load, apply_mask, render
from .storage import DatasetFile, record_dtype
from .types import ActuatorLoad, DepthFrame, HeadModel, RigidTransform

logger = logging.getLogger(__name__)

CONTACT_THRESHOLD = 0.05


@dataclass(frozen=True)
class Sample:
    frame: DepthFrame
    q: ActuatorLoad
    w: np.ndarray
    episode: int
    step: int


@dataclass(frozen=True)
class EpisodePlan:
    direction: np.ndarray
    roll: float
    lateral: np.ndarray
    depths: np.ndarray  # (steps,) metres past first contact; negative is clear of the hair
    commands: np.ndarray  # (steps, 4)


def _uniform(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    return float(rng.uniform(bounds[0], bounds[1]))


def plan_episode(sampler: SamplerConfig, episode: int) -> EpisodePlan:
    """Draw the approach pose and command ramp of one episode from its derived seed.

    A ``symmetric_fraction`` of episodes mirrors the task grasps: both fingers get the same
    plane-a command, plane b stays slack and there is no roll or lateral offset.
    """
    rng = np.random.default_rng([sampler.seed, episode])
    symmetric = rng.uniform() < sampler.symmetric_fraction
    polar = math.radians(_uniform(rng, sampler.polar_deg))
    azimuth = math.radians(_uniform(rng, sampler.azimuth_deg))
    outward = np.array(
        [math.sin(polar) * math.cos(azimuth), math.sin(polar) * math.sin(azimuth), math.cos(polar)]
    )
    roll = math.radians(_uniform(rng, sampler.roll_deg))

    helper = np.array([1.0, 0.0, 0.0]) if abs(outward[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(outward, helper)
    u /= np.linalg.norm(u)
    v = np.cross(outward, u)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    lateral = _uniform(rng, sampler.lateral_offset) * (math.cos(phase) * u + math.sin(phase) * v)

    steps = sampler.steps_per_episode
    depths = np.linspace(_uniform(rng, sampler.depth_start), _uniform(rng, sampler.depth_end), steps)
    ends = []
    for _ in range(2):
        ends.append(
            [
                _uniform(rng, sampler.command_a),
                _uniform(rng, sampler.command_b),
                _uniform(rng, sampler.command_a),
                _uniform(rng, sampler.command_b),
            ]
        )
    ends_arr = np.asarray(ends)
    if symmetric:
        ends_arr[:, 2] = ends_arr[:, 0]
        ends_arr[:, [1, 3]] = 0.0
        roll, lateral = 0.0, np.zeros(3)
    blend = np.linspace(0.0, 1.0, steps)[:, None]
    commands = (1.0 - blend) * ends_arr[0] + blend * ends_arr[1]
    return EpisodePlan(-outward, roll, lateral, depths, commands)


class Collector:
    """Runs episodes against one static head and turns each solve into a labelled sample."""

    def __init__(
        self,
        sampler: SamplerConfig,
        scene: SceneConfig,
        camera: CameraModel,
        current_model: CurrentModel,
        mechanics: MechanicsConfig,
    ):
        self.sampler = sampler
        self.camera = camera
        self.current_model = current_model
        self.mechanics = mechanics
        self.head: HeadModel = scene_head(scene, sampler.wig)

    def run_episode(self, episode: int) -> List[Sample]:
        """All samples of one episode; raises SolverError if any step fails."""
        plan = plan_episode(self.sampler, episode)
        finger, solver = self.mechanics.finger, self.mechanics.solver
        s0 = first_contact_distance(
            finger, self.head, plan.direction, plan.commands[0], plan.roll, solver,
            lateral=plan.lateral,
        )
        samples = []
        states = None
        for step, (depth, cmd) in enumerate(zip(plan.depths, plan.commands)):
            pose = ee_pose_at(self.head, plan.direction, s0 - depth, plan.roll, plan.lateral)
            states, contacts, tendons = equilibrium_solve(
                finger, cmd, self.head, pose, solver, initial=states
            )
            seed = [self.sampler.seed, episode, step]
            frame, mask = render(
                self.camera, finger, states, self.head, pose,
                seed=seed + [1], noise_mm=self.sampler.depth_noise_mm,
            )
            q = actuator_load(tendons, self.current_model, seed=seed + [2])
            w = ee_force(pose, head_wrench(contacts, self.head).force)
            samples.append(Sample(apply_mask(frame, mask), q, w, episode, step))
        return samples

    def try_episode(self, episode: int) -> Optional[List[Sample]]:
        try:
            return self.run_episode(episode)
        except SolverError as exc:
            logger.warning("skipping episode %d: %s", episode, exc)
            return None


def ee_force(pose: RigidTransform, world_force: np.ndarray) -> np.ndarray:
    """Express a world-frame force in the end-effector frame."""
    return pose.rotation.T @ world_force


def records_from_samples(samples: Sequence[Sample], height: int, width: int) -> np.ndarray:
    records = np.zeros(len(samples), dtype=record_dtype(height, width))
    for i, sample in enumerate(samples):
        records[i]["episode"] = sample.episode
        records[i]["step"] = sample.step
        records[i]["q"] = sample.q.q
        records[i]["w"] = sample.w
        records[i]["depth"] = sample.frame.depth
    return records


def collect(
    sampler: SamplerConfig,
    scene: SceneConfig,
    camera: CameraModel,
    current_model: CurrentModel,
    mechanics: MechanicsConfig,
    on_episode: Optional[Callable[[int], None]] = None,
) -> DatasetFile:
    """Collect ``n_episodes`` episodes; output order is episode id then step."""
    collector = Collector(sampler, scene, camera, current_model, mechanics)
    episodes = range(sampler.n_episodes)

    def work(episode: int):
        result = collector.try_episode(episode)
        if on_episode is not None:
            on_episode(episode)
        return result

    if sampler.workers > 1:
        with ThreadPoolExecutor(max_workers=sampler.workers) as pool:
            results = list(pool.map(work, episodes))
    else:
        results = [work(e) for e in episodes]

    skipped = sum(1 for r in results if r is None)
    if sampler.n_episodes and skipped / sampler.n_episodes > sampler.max_failure_rate:
        raise CollectionError(
            f"{skipped} of {sampler.n_episodes} episodes failed to solve; "
            "parameter ranges are unusable"
        )
    samples = [s for r in results if r is not None for s in r]
    dataset = DatasetFile(
        camera.height,
        camera.width,
        sampler.wig,
        sampler.seed,
        records_from_samples(samples, camera.height, camera.width),
        skipped,
    )
    if dataset.count:
        contact, free = check_coverage(dataset)
        logger.info(
            "collected %d samples (%d episodes skipped): %.0f%% in contact, %.0f%% free",
            dataset.count, skipped, 100 * contact, 100 * free,
        )
        if sampler.require_coverage and (
            contact < sampler.min_contact_fraction or free < sampler.min_free_fraction
        ):
            raise CollectionError(
                f"coverage guard failed: {contact:.0%} in contact "
                f"(need {sampler.min_contact_fraction:.0%}), {free:.0%} free "
                f"(need {sampler.min_free_fraction:.0%})"
            )
    return dataset


def check_coverage(dataset: DatasetFile) -> Tuple[float, float]:
    """Fractions of samples in contact (|w| > 0.05 N) and in free space (w = 0)."""
    if dataset.count == 0:
        return 0.0, 0.0
    norms = np.linalg.norm(dataset.records["w"], axis=1)
    return float(np.mean(norms > CONTACT_THRESHOLD)), float(np.mean(norms == 0.0))


def replay_episode(
    sampler: SamplerConfig,
    episode: int,
    scene: SceneConfig,
    camera: CameraModel,
    current_model: CurrentModel,
    mechanics: MechanicsConfig,
) -> List[Sample]:
    """Regenerate one episode from the global seed and its id."""
    return Collector(sampler, scene, camera, current_model, mechanics).run_episode(episode)


def split(dataset: DatasetFile, test_fraction: float, seed: int) -> Tuple[List[int], List[int]]:
    """Partition episode ids into train and test sets."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractViolation("test fraction must lie strictly between 0 and 1")
    ids = [int(e) for e in dataset.episode_ids()]
    if len(ids) < 2:
        raise ContractViolation("splitting needs at least 2 episodes")
    n_test = min(len(ids) - 1, max(1, int(round(test_fraction * len(ids)))))
    order = np.random.default_rng(seed).permutation(len(ids))
    test = sorted(ids[i] for i in order[:n_test])
    train = sorted(ids[i] for i in order[n_test:])
    return train, test
