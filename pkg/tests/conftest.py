import numpy as np
import pytest

from moe_sim.models import (
    CameraModel,
    EncoderConfig,
    FingerModel,
    GlobalConfig,
    HeadConfig,
    SamplerConfig,
    SceneConfig,
    TrainConfig,
)
from moe_sim.scene import make_head
from moe_sim.types import HeadModel


@pytest.fixture
def finger():
    return FingerModel()


@pytest.fixture
def head():
    return make_head(HeadConfig(n_anchors=300))


@pytest.fixture
def soft_head():
    """Hair/scalp values used by the hand-evaluated contact-law examples."""
    return HeadModel(np.zeros(3), 0.09, 0.02, 50.0, 2000.0)


@pytest.fixture
def camera():
    return CameraModel()


@pytest.fixture
def small_camera():
    return CameraModel(width=16, height=16, cx=8.0, cy=8.0, fx=15.0, fy=15.0)


@pytest.fixture
def tiny_encoder():
    return EncoderConfig(channels=(2, 3), kernel=3, feature_width=4, load_hidden=3, fusion_hidden=5)


@pytest.fixture
def tiny_train(tiny_encoder):
    return TrainConfig(
        learning_rate=0.01, batch_size=8, epochs=3, seed=0, encoder=tiny_encoder, q_scale=1.0
    )


@pytest.fixture
def small_sampler():
    return SamplerConfig(n_episodes=4, steps_per_episode=3, require_coverage=False, seed=7)


@pytest.fixture
def small_config(small_camera, small_sampler, tiny_train):
    return GlobalConfig(
        camera=small_camera,
        sampler=small_sampler,
        train=tiny_train,
        scene=SceneConfig(head=HeadConfig(n_anchors=300)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
