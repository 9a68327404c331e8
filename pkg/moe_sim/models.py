"""Parameter and configuration models."""

from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Variant(str, Enum):
    FUSED = "fused"
    DEPTH_ONLY = "depth-only"
    LOAD_ONLY = "load-only"


class FeedbackMode(str, Enum):
    FORCE_FEEDBACK = "force-feedback"
    VISION_ONLY = "vision-only"


class TaskKind(str, Enum):
    PAT = "pat"
    COMB = "comb"
    GRASP = "grasp"


class Approach(str, Enum):
    TOP = "top"
    SIDE = "side"


class PoseMode(str, Enum):
    STATIC = "static"
    SINUSOIDAL = "sinusoidal-drift"
    RANDOM_WALK = "seeded-random-walk"


class DemoStyle(str, Enum):
    ARC = "arc"
    ZIGZAG = "zigzag"


class MaskCorruption(str, Enum):
    DILATE = "dilate"
    ERODE = "erode"
    FLIP = "flip"


class Optimizer(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class EndEffector(str, Enum):
    RIGID = "rigid"
    MOE = "moe"


Range = Tuple[float, float]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _check_range(value: Range) -> Range:
    low, high = value
    if low > high:
        raise ValueError(f"empty range ({low}, {high})")
    return value


class FingerModel(_Model):
    """Pseudo-rigid-body soft finger; two bending planes per joint."""

    n_links: int = Field(8, ge=1)
    length: float = Field(0.105, gt=0, description="total finger length [m]")
    radius: float = Field(0.0085, gt=0)
    joint_stiffness: float = Field(1.2, gt=0, description="N*m/rad per torsional DOF")
    moment_arm: float = Field(0.006, gt=0)
    tendon_series_stiffness: float = Field(2000.0, gt=0, description="N/m")
    n_tendons: int = Field(4, ge=4, le=4)
    pretension: float = Field(0.0, ge=0, description="tendon take-up applied to both sides [m]")
    joint_limit: float = Field(1.35, gt=0, lt=1.5707963267948966)
    limit_stiffness: float = Field(50.0, gt=0)
    mount_offset: float = Field(0.012, ge=0, description="finger base distance from EE axis [m]")

    @model_validator(mode="after")
    def _moment_arm_inside(self) -> "FingerModel":
        if self.moment_arm >= self.radius:
            raise ValueError("moment_arm must be smaller than radius")
        return self

    @property
    def link_length(self) -> float:
        return self.length / self.n_links


class RigidGripperModel(_Model):
    """Stiff parallel-jaw gripper; the jaws stay parallel while they close."""

    finger_length: float = Field(0.1, gt=0, description="jaw length below the palm [m]")
    contact_stiffness: float = Field(5.0e5, gt=0)
    jaw_separation: float = Field(0.04, ge=0)
    jaw_radius: float = Field(0.008, gt=0)


class SolverSettings(_Model):
    tolerance: float = Field(1e-6, gt=0)
    max_iterations: int = Field(200, ge=1)
    max_halvings: int = Field(20, ge=0)
    fd_step: float = Field(1e-7, gt=0)


class PressSettings(_Model):
    """Open-press-close grasp used by grasp-compare."""

    open_command: float = -0.02
    close_command: float = 0.02
    depth_increment: float = Field(0.0005, gt=0)
    close_steps: int = Field(10, ge=1)
    closure_tolerance: float = Field(0.005, ge=0)
    max_depth: float = Field(0.04, gt=0, description="deepest press searched while closing [m]")


class MechanicsConfig(_Model):
    finger: FingerModel = FingerModel()
    gripper: RigidGripperModel = RigidGripperModel()
    solver: SolverSettings = SolverSettings()
    press: PressSettings = PressSettings()
    grasp_depths_mm: List[float] = [2.0, 4.0, 6.0]


class HeadConfig(_Model):
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = Field(0.09, gt=0)
    h_hair: float = Field(0.02, ge=0)
    k_hair: float = Field(800.0, gt=0)
    k_scalp: float = Field(4000.0, gt=0)
    n_anchors: int = Field(500, ge=0)
    anchor_seed: int = 0


class WigPreset(_Model):
    name: str
    h_hair: float = Field(ge=0)
    k_hair: float = Field(gt=0)

    @field_validator("name")
    @classmethod
    def _known_name(cls, value: str) -> str:
        if value not in ("wig1", "wig2", "wig3"):
            raise ValueError("wig preset name must be one of wig1, wig2, wig3")
        return value


DEFAULT_WIGS = [
    WigPreset(name="wig1", h_hair=0.015, k_hair=900.0),
    WigPreset(name="wig2", h_hair=0.025, k_hair=600.0),
    WigPreset(name="wig3", h_hair=0.020, k_hair=750.0),
]


class HeadPoseProvider(_Model):
    """Synthetic stand-in for the third-person face tracker."""

    mode: PoseMode = PoseMode.STATIC
    amplitude: float = Field(0.005, ge=0)
    period: float = Field(4.0, gt=0)
    noise_sigma: float = Field(0.0, ge=0)
    rate: float = Field(12.5, gt=0)
    axis: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    latency: float = Field(0.0, ge=0)
    step_sigma: float = Field(0.001, ge=0, description="random-walk step per tick [m]")


class SceneConfig(_Model):
    head: HeadConfig = HeadConfig()
    wigs: List[WigPreset] = DEFAULT_WIGS
    pose: HeadPoseProvider = HeadPoseProvider()

    @field_validator("wigs")
    @classmethod
    def _distinct_wigs(cls, value: List[WigPreset]) -> List[WigPreset]:
        names = [w.name for w in value]
        if len(set(names)) != len(names):
            raise ValueError("wig preset names must be unique")
        if len({(w.h_hair, w.k_hair) for w in value}) != len(value):
            raise ValueError("wig presets must have distinct (h_hair, k_hair)")
        return value

    def wig(self, name: str) -> WigPreset:
        for preset in self.wigs:
            if preset.name == name:
                return preset
        raise KeyError(name)


class CameraModel(_Model):
    """Wrist camera; the mount pose is given in the end-effector frame."""

    fx: float = Field(60.0, gt=0)
    fy: float = Field(60.0, gt=0)
    cx: float = 32.0
    cy: float = 32.0
    width: int = Field(64, ge=1, le=224)
    height: int = Field(64, ge=1, le=224)
    mount_translation: Tuple[float, float, float] = (0.0, 0.03, -0.06)
    mount_rotvec: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    min_range_mm: int = 70
    max_range_mm: int = 500
    depth_noise_mm: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _principal_point_inside(self) -> "CameraModel":
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not 0 < self.min_range_mm < self.max_range_mm <= 65535:
            raise ValueError("depth range must satisfy 0 < min < max <= 65535")
        return self


class CurrentModel(_Model):
    k_s: float = Field(2.0, gt=0, description="N per current unit")
    deadband: float = Field(0.05, ge=0, description="N")
    noise_sigma: float = Field(0.0, ge=0, description="current units")


class EncoderConfig(_Model):
    channels: Tuple[int, ...] = (8, 16, 32)
    kernel: int = Field(3, ge=1)
    feature_width: int = Field(64, ge=1)
    load_hidden: int = Field(32, ge=1)
    fusion_hidden: int = Field(64, ge=1)
    pool_grid: int = Field(4, ge=1, description="cells per side of the pooled feature map")
    coord_channels: bool = True

    @field_validator("channels")
    @classmethod
    def _nonempty(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value or min(value) < 1:
            raise ValueError("channels must be a non-empty list of positive ints")
        return value

    @field_validator("kernel")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("kernel size must be odd")
        return value

    @property
    def input_channels(self) -> int:
        return 3 if self.coord_channels else 1


class TrainConfig(_Model):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    optimizer: Optimizer = Optimizer.ADAM
    learning_rate: float = Field(1e-3, gt=0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(40, ge=1)
    seed: int = 0
    momentum: float = Field(0.9, ge=0, lt=1, description="SGD momentum; Adam first-moment decay")
    grad_clip: Optional[float] = Field(5.0, gt=0)
    loss_weights: Optional[Tuple[float, float, float]] = Field(None, alias="lambda")
    depth_scale: float = Field(1.0 / 500.0, gt=0)
    q_scale: Optional[float] = Field(None, gt=0)
    test_fraction: float = Field(0.2, gt=0, lt=1)
    encoder: EncoderConfig = EncoderConfig()

    @field_validator("loss_weights")
    @classmethod
    def _positive_lambda(
        cls, value: Optional[Tuple[float, float, float]]
    ) -> Optional[Tuple[float, float, float]]:
        if value is not None and min(value) <= 0:
            raise ValueError("lambda components must be strictly positive")
        return value


class SamplerConfig(_Model):
    n_episodes: int = Field(400, ge=0)
    steps_per_episode: int = Field(5, ge=1)
    polar_deg: Range = (0.0, 100.0)
    azimuth_deg: Range = (-180.0, 180.0)
    roll_deg: Range = (-20.0, 20.0)
    lateral_offset: Range = (0.0, 0.02)
    depth_start: Range = (-0.015, 0.0)
    depth_end: Range = (-0.005, 0.02)
    command_a: Range = (-0.025, 0.025)
    command_b: Range = (-0.005, 0.005)
    symmetric_fraction: float = Field(
        0.5, ge=0, le=1, description="episodes with mirrored plane-a commands and no offsets"
    )
    depth_noise_mm: float = Field(1.0, ge=0)
    seed: int = 0
    wig: str = "wig1"
    require_coverage: bool = True
    min_contact_fraction: float = Field(0.3, ge=0, le=1)
    min_free_fraction: float = Field(0.1, ge=0, le=1)
    max_failure_rate: float = Field(0.5, ge=0, le=1)
    workers: int = Field(1, ge=1)

    @field_validator(
        "polar_deg", "azimuth_deg", "roll_deg", "lateral_offset",
        "depth_start", "depth_end", "command_a", "command_b",
    )
    @classmethod
    def _ranges(cls, value: Range) -> Range:
        return _check_range(value)


class ControllerConfig(_Model):
    target_force: float = Field(2.0, gt=0)
    kp: float = Field(0.0005, ge=0, description="m/N")
    ki: float = Field(0.008, ge=0, description="m/(N*s)")
    integral_clamp: float = Field(0.005, ge=0, description="m")
    rate: float = Field(10.0, gt=0)
    max_step: float = Field(0.002, gt=0)
    settle_window: float = Field(0.5, ge=0)
    approach_speed: float = Field(0.005, gt=0)
    standoff: float = Field(0.005, ge=0)
    pat_count: int = Field(3, ge=1)
    pat_hold: float = Field(2.0, gt=0)
    retreat_time: float = Field(1.0, gt=0)
    grasp_hold: float = Field(3.0, gt=0)
    grasp_close_time: float = Field(2.0, gt=0)
    pat_command: float = 0.010
    grasp_open_command: float = -0.02
    grasp_close_command: float = 0.02
    contact_threshold: float = Field(0.1, ge=0)
    max_depth: float = Field(0.04, gt=0, description="hard limit on commanded depth [m]")
    seed: int = 0


class GlobalConfig(_Model):
    mechanics: MechanicsConfig = MechanicsConfig()
    scene: SceneConfig = SceneConfig()
    camera: CameraModel = CameraModel()
    current_model: CurrentModel = CurrentModel()
    sampler: SamplerConfig = SamplerConfig()
    train: TrainConfig = TrainConfig()
    controller: ControllerConfig = ControllerConfig()
