import logging
from dataclasses import replace

import numpy as np
import pytest

from moe_sim.control import LearnedEstimator, TaskSpec, run_task
from moe_sim.dataset import collect
from moe_sim.errors import ConfigError, ContractViolation
from moe_sim.estimator import init_estimator, train
from moe_sim.experiments import (
    ablation_summary,
    estimator_ablation,
    evaluate_checkpoints,
    grasp_compare,
    inference_budget,
    mode_comparison,
    train_val_test,
)
from moe_sim.models import (
    Approach,
    FeedbackMode,
    GlobalConfig,
    HeadPoseProvider,
    PoseMode,
    TaskKind,
    Variant,
)
from moe_sim.types import ActuatorLoad, DepthFrame


class ConstantForce:
    def __init__(self, force):
        self.force = np.asarray(force, dtype=float)

    def predict(self, frame, q):
        return self.force


def test_grasp_compare_rows(small_config):
    rows = grasp_compare(small_config, [2.0, 4.0])
    assert [(r["end_effector"], r["depth_mm"]) for r in rows] == [
        ("rigid", 2.0), ("rigid", 4.0), ("moe", 2.0), ("moe", 4.0)
    ]
    assert set(rows[0]) == {"end_effector", "depth_mm", "max_force_N", "strand_count"}
    rigid = {r["depth_mm"]: r["max_force_N"] for r in rows if r["end_effector"] == "rigid"}
    soft = {r["depth_mm"]: r["max_force_N"] for r in rows if r["end_effector"] == "moe"}
    assert rigid[4.0] > rigid[2.0]
    assert all(soft[d] < rigid[d] for d in rigid)


def test_grasp_compare_needs_positive_depths(small_config):
    with pytest.raises(ContractViolation):
        grasp_compare(small_config, [])
    with pytest.raises(ContractViolation):
        grasp_compare(small_config, [0.0, 2.0])


def _row(wig, seed, variant, rmse):
    return {"wig": wig, "seed": seed, "variant": variant.value, "rmse_total": rmse}


def test_ablation_summary():
    rows = [
        _row("wig1", 0, Variant.FUSED, 0.2),
        _row("wig1", 0, Variant.DEPTH_ONLY, 0.4),
        _row("wig1", 0, Variant.LOAD_ONLY, 0.5),
        _row("wig2", 0, Variant.FUSED, 0.3),
        _row("wig2", 0, Variant.DEPTH_ONLY, 0.6),
        _row("wig2", 0, Variant.LOAD_ONLY, 0.5),
        _row("wig3", 0, Variant.FUSED, 0.3),
    ]
    summary = ablation_summary(rows)
    assert summary["runs"] == 2
    assert summary["ordered_runs"] == 1
    assert summary["improvement_over_depth_only"] == pytest.approx(0.5)
    assert summary["improvement_over_load_only"] == pytest.approx((0.6 + 0.4) / 2)


def test_train_val_test_partitions_episodes(small_config):
    config = small_config
    dataset = collect(config.sampler, config.scene, config.camera, config.current_model, config.mechanics)
    fit, val, test = train_val_test(dataset, 0.25, seed=0)
    assert len(fit) + len(val) + len(test) == dataset.count
    assert len(test) > 0 and len(fit) > 0


def test_inference_budget(tiny_train, rng):
    params = init_estimator(tiny_train, Variant.FUSED, 1.0, rng)
    frame = DepthFrame(np.full((16, 16), 150), masked=True)
    q = ActuatorLoad(np.ones(4))
    assert inference_budget(params, frame, q, repeats=3) > 0.0
    with pytest.raises(ContractViolation):
        inference_budget(params, frame, q, repeats=0)


def test_mode_comparison_pairs_runs(small_config):
    target = small_config.controller.target_force
    spec = TaskSpec(TaskKind.PAT, Approach.TOP, pat_count=1)
    rows = mode_comparison(small_config, spec, ConstantForce([0.0, 0.0, target]))
    assert [r["mode"] for r in rows] == ["force-feedback", "vision-only"]
    assert all(r["task"] == "pat" and r["aborted"] is False for r in rows)


@pytest.mark.slow
def test_estimator_ablation_rows(small_config):
    seen = []
    rows = estimator_ablation(small_config, ["wig1"], [0], on_run=lambda *a: seen.append(a))
    assert [r["variant"] for r in rows] == ["fused", "depth-only", "load-only"]
    assert all(r["wig"] == "wig1" and r["seed"] == 0 for r in rows)
    assert all(np.isfinite(r["rmse_total"]) for r in rows)
    assert len(seen) == 3


def test_checkpoints_are_evaluated_on_their_wig(small_config, tiny_train, rng, caplog):
    config = small_config
    datasets = [
        collect(
            config.sampler.model_copy(update={"wig": wig}), config.scene, config.camera,
            config.current_model, config.mechanics,
        )
        for wig in ("wig1", "wig2")
    ]
    base = init_estimator(tiny_train, Variant.FUSED, 1.0, rng)
    models = [replace(base, wig="wig2"), base, replace(base, wig="wig3")]
    with caplog.at_level(logging.WARNING, logger="moe_sim"):
        rows = evaluate_checkpoints(models, datasets, 0.25, seed=0)
    assert [r["wig"] for r in rows] == ["wig2", "wig1", "wig2"]
    assert "wig3" in caplog.text


def test_ablation_rejects_unknown_wig(small_config):
    with pytest.raises(ConfigError):
        estimator_ablation(small_config, ["wig9"], [0])


@pytest.mark.slow
def test_default_estimator_meets_the_inference_budget(rng):
    config = GlobalConfig()
    params = init_estimator(config.train, Variant.FUSED, 1.0, rng)
    frame = DepthFrame(np.full((config.camera.height, config.camera.width), 300), masked=True)
    assert inference_budget(params, frame, ActuatorLoad(np.ones(4)), repeats=5) <= 0.098


@pytest.mark.slow
def test_soft_fingers_press_far_less_than_rigid_jaws():
    rows = grasp_compare(GlobalConfig(), [2.0, 4.0, 6.0])
    rigid = [r["max_force_N"] for r in rows if r["end_effector"] == "rigid"]
    soft = [r["max_force_N"] for r in rows if r["end_effector"] == "moe"]
    assert rigid == sorted(rigid) and soft == sorted(soft)
    assert all(s < r for s, r in zip(soft, rigid))
    assert soft[-1] <= 0.4 * rigid[-1]


@pytest.mark.slow
def test_fused_estimator_wins_the_ablation():
    rows = estimator_ablation(GlobalConfig(), ["wig1", "wig2", "wig3"], [0, 1, 2])
    summary = ablation_summary(rows)
    assert summary["runs"] == 9
    assert summary["ordered_runs"] >= 8
    assert summary["improvement_over_load_only"] >= 0.30
    assert summary["improvement_over_depth_only"] >= 0.05


@pytest.fixture(scope="module")
def trained_fused():
    config = GlobalConfig()
    dataset = collect(config.sampler, config.scene, config.camera, config.current_model, config.mechanics)
    fit, val, _ = train_val_test(dataset, config.train.test_fraction, config.train.seed)
    params, _ = train(fit, val, config.train, Variant.FUSED)
    return config, LearnedEstimator(params)


@pytest.mark.slow
def test_trained_estimator_tracks_the_setpoint(trained_fused):
    config, estimator = trained_fused
    target = config.controller.target_force
    spec = TaskSpec(TaskKind.PAT, Approach.TOP, pat_count=config.controller.pat_count)
    result = run_task(spec, FeedbackMode.FORCE_FEEDBACK, config, estimator)
    assert not result.aborted
    assert result.metrics["tracking_ratio"] >= 0.9
    assert result.metrics["max_true_force_N"] <= 2.0 * target


@pytest.mark.slow
def test_force_feedback_rejects_head_drift(trained_fused):
    config, estimator = trained_fused
    pose = HeadPoseProvider(mode=PoseMode.SINUSOIDAL, amplitude=0.008, latency=0.3)
    drifting = config.model_copy(update={"scene": config.scene.model_copy(update={"pose": pose})})
    spec = TaskSpec(TaskKind.PAT, Approach.TOP, pat_count=drifting.controller.pat_count)
    feedback, vision = mode_comparison(drifting, spec, estimator)
    assert feedback["mean_force_deviation_N"] < vision["mean_force_deviation_N"]
