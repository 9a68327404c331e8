import numpy as np
import pytest

from moe_sim.dataset import (
    check_coverage,
    collect,
    ee_force,
    plan_episode,
    replay_episode,
    split,
)
from moe_sim.errors import CollectionError, ContractViolation
from moe_sim.models import CameraModel, GlobalConfig, HeadConfig, SamplerConfig, SceneConfig
from moe_sim.storage import DatasetFile, decode_dataset, encode_dataset, record_dtype
from moe_sim.types import RigidTransform


def _collect(config, **update):
    sampler = config.sampler.model_copy(update=update)
    return collect(sampler, config.scene, config.camera, config.current_model, config.mechanics)


@pytest.fixture(scope="module")
def collected():
    config = GlobalConfig(
        camera=CameraModel(width=16, height=16, cx=8.0, cy=8.0, fx=15.0, fy=15.0),
        sampler=SamplerConfig(n_episodes=4, steps_per_episode=3, require_coverage=False, seed=7),
        scene=SceneConfig(head=HeadConfig(n_anchors=300)),
    )
    return config, _collect(config)


def test_episode_plan_is_reproducible():
    sampler = SamplerConfig(seed=3)
    a, b = plan_episode(sampler, 5), plan_episode(sampler, 5)
    np.testing.assert_array_equal(a.commands, b.commands)
    np.testing.assert_array_equal(a.direction, b.direction)
    assert not np.allclose(plan_episode(sampler, 6).direction, a.direction)


def test_symmetric_episodes_mirror_the_fingers():
    sampler = SamplerConfig(seed=2, symmetric_fraction=1.0)
    for episode in range(10):
        plan = plan_episode(sampler, episode)
        np.testing.assert_array_equal(plan.commands[:, 0], plan.commands[:, 2])
        assert not np.any(plan.commands[:, [1, 3]])
        assert plan.roll == 0.0
        assert not np.any(plan.lateral)
    mixed = SamplerConfig(seed=2, symmetric_fraction=0.0)
    assert any(plan_episode(mixed, e).roll != 0.0 for e in range(10))


def test_episode_plan_respects_ranges():
    sampler = SamplerConfig(seed=1, steps_per_episode=6)
    for episode in range(20):
        plan = plan_episode(sampler, episode)
        assert np.linalg.norm(plan.direction) == pytest.approx(1.0)
        assert abs(plan.lateral @ plan.direction) < 1e-12
        assert np.linalg.norm(plan.lateral) <= sampler.lateral_offset[1] + 1e-12
        assert sampler.depth_start[0] <= plan.depths[0] <= sampler.depth_start[1]
        assert sampler.depth_end[0] <= plan.depths[-1] <= sampler.depth_end[1]
        assert plan.commands.shape == (6, 4)
        assert np.all(np.abs(plan.commands[:, [0, 2]]) <= sampler.command_a[1])
        # polar angle is measured from the crown
        polar = np.degrees(np.arccos(-plan.direction[2]))
        assert polar <= sampler.polar_deg[1] + 1e-9


def test_records_are_ordered_by_episode_then_step(collected):
    config, dataset = collected
    assert dataset.count == config.sampler.steps_per_episode * (4 - dataset.skipped)
    keys = list(zip(dataset.records["episode"], dataset.records["step"]))
    assert keys == sorted(keys)
    assert dataset.wig == config.sampler.wig
    assert dataset.records["depth"].shape[1:] == (16, 16)


def test_free_space_samples_have_exactly_zero_force(collected):
    _, dataset = collected
    norms = np.linalg.norm(dataset.records["w"], axis=1)
    contact, free = check_coverage(dataset)
    assert contact + free <= 1.0
    assert free == pytest.approx(np.mean(norms == 0.0))


def test_replay_regenerates_an_episode(collected):
    config, dataset = collected
    episode = int(dataset.episode_ids()[0])
    samples = replay_episode(
        config.sampler, episode, config.scene, config.camera, config.current_model, config.mechanics
    )
    stored = dataset.select([episode]).records
    for sample, record in zip(samples, stored):
        np.testing.assert_array_equal(sample.frame.depth, record["depth"])
        np.testing.assert_array_equal(sample.w, record["w"])
        np.testing.assert_array_equal(sample.q.q, record["q"])


@pytest.mark.slow
def test_worker_threads_do_not_change_output(collected):
    config, dataset = collected
    threaded = _collect(config, workers=3)
    assert encode_dataset(threaded) == encode_dataset(dataset)


def test_collected_dataset_survives_storage(collected):
    _, dataset = collected
    restored = decode_dataset(encode_dataset(dataset))
    assert restored.records.tobytes() == dataset.records.tobytes()


def test_coverage_guard(small_config):
    with pytest.raises(CollectionError):
        _collect(small_config, require_coverage=True, min_contact_fraction=1.0, n_episodes=2)


def test_unknown_wig(small_config):
    with pytest.raises(ContractViolation):
        _collect(small_config, wig="wig7")


def test_ee_force_rotates_into_end_effector_frame():
    pose = RigidTransform.from_axis((0.0, 0.0, -1.0), (0.0, 0.0, 0.3))
    np.testing.assert_allclose(ee_force(pose, np.array([0.0, 0.0, -2.0])), [0.0, 0.0, 2.0])


def _episodes(n):
    records = np.zeros(n, dtype=record_dtype(2, 2))
    records["episode"] = np.arange(n)
    return DatasetFile(2, 2, "wig1", 0, records)


def test_split_partitions_episodes():
    train, test = split(_episodes(10), 0.2, seed=4)
    assert len(test) == 2
    assert sorted(train + test) == list(range(10))
    assert split(_episodes(10), 0.2, seed=4) == (train, test)


def test_split_keeps_one_training_episode():
    train, test = split(_episodes(2), 0.9, seed=0)
    assert len(train) == 1 and len(test) == 1


@pytest.mark.parametrize("fraction, n", [(0.0, 5), (1.0, 5), (0.5, 1)])
def test_split_preconditions(fraction, n):
    with pytest.raises(ContractViolation):
        split(_episodes(n), fraction, seed=0)
