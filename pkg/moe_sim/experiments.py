"""Experiment drivers behind the CLI: grasp comparison, estimator ablation, mode comparison."""

import logging
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import update_section
from .control import ForceEstimator, TaskSpec, grasp_strands, rigid_strands, run_task
from .dataset import collect, split
from .errors import ContractViolation, TaskAbort
from .estimator import Arrays, EstimatorParams, evaluate_rmse, predict, train
from .mechanics import rigid_press
from .models import EndEffector, FeedbackMode, GlobalConfig, Variant
from .scene import scene_head
from .storage import DatasetFile
from .types import ActuatorLoad, DepthFrame

logger = logging.getLogger(__name__)

Row = Dict[str, object]

VARIANT_ORDER = (Variant.FUSED, Variant.DEPTH_ONLY, Variant.LOAD_ONLY)


def grasp_compare(
    config: GlobalConfig, depths_mm: Sequence[float], wig: Optional[str] = None
) -> List[Row]:
    """Peak head force and strand count of the rigid gripper and the soft fingers per depth."""
    if not depths_mm or min(depths_mm) <= 0:
        raise ContractViolation("grasp depths must be positive")
    mechanics = config.mechanics
    head = scene_head(config.scene, wig)
    rows: List[Row] = []
    for depth_mm in depths_mm:
        depth = depth_mm / 1000.0
        rows.append(
            {
                "end_effector": EndEffector.RIGID.value,
                "depth_mm": float(depth_mm),
                "max_force_N": rigid_press(mechanics.gripper, head, depth),
                "strand_count": rigid_strands(mechanics.gripper, head, depth),
            }
        )
    for depth_mm in depths_mm:
        force, strands = grasp_strands(mechanics, head, depth_mm / 1000.0)
        rows.append(
            {
                "end_effector": EndEffector.MOE.value,
                "depth_mm": float(depth_mm),
                "max_force_N": force,
                "strand_count": strands,
            }
        )
        logger.debug("moe grasp at %.1f mm: %.3f N, %d strands", depth_mm, force, strands)
    return rows


def train_val_test(dataset: DatasetFile, fraction: float, seed: int) -> Tuple[Arrays, Arrays, Arrays]:
    """Held-out test episodes, then a validation split of the rest for checkpoint selection."""
    train_ids, test_ids = split(dataset, fraction, seed)
    if len(train_ids) >= 2:
        fit_ids, val_ids = split(dataset.select(train_ids), fraction, seed + 1)
    else:
        fit_ids, val_ids = train_ids, []
    fit, val, test = (Arrays.from_dataset(dataset.select(ids)) for ids in (fit_ids, val_ids, test_ids))
    return fit, val, test


def evaluation_row(wig: str, variant: Variant, params: EstimatorParams, data: Arrays) -> Row:
    row: Row = {"wig": wig, "variant": Variant(variant).value}
    row.update(evaluate_rmse(params, data).as_row())
    return row


def evaluate_checkpoints(
    models: Sequence[EstimatorParams],
    datasets: Sequence[DatasetFile],
    fraction: float,
    seed: int,
) -> List[Row]:
    """Held-out RMSE of each checkpoint on the datasets of the wig it was trained on.

    Checkpoints without a recorded wig are evaluated on every dataset.
    """
    tests = [train_val_test(dataset, fraction, seed)[2] for dataset in datasets]
    rows: List[Row] = []
    for params in models:
        matched = 0
        for dataset, test in zip(datasets, tests):
            if params.wig is not None and params.wig != dataset.wig:
                continue
            rows.append(evaluation_row(dataset.wig, params.variant, params, test))
            matched += 1
        if not matched:
            logger.warning(
                "no dataset of wig %s for the %s checkpoint", params.wig, params.variant.value
            )
    return rows


def estimator_ablation(
    config: GlobalConfig,
    wigs: Sequence[str],
    seeds: Sequence[int],
    variants: Sequence[Variant] = VARIANT_ORDER,
    on_run: Optional[Callable[[str, int, Variant], None]] = None,
) -> List[Row]:
    """Collect one dataset per (wig, seed), train every variant on it and report held-out RMSE."""
    rows: List[Row] = []
    for wig in wigs:
        for seed in seeds:
            sampler = update_section(config.sampler, {"wig": wig, "seed": seed}, "sampler")
            dataset = collect(
                sampler, config.scene, config.camera, config.current_model, config.mechanics
            )
            fit, val, test = train_val_test(dataset, config.train.test_fraction, seed)
            train_config = update_section(config.train, {"seed": seed}, "train")
            for variant in variants:
                if on_run is not None:
                    on_run(wig, seed, variant)
                params, _ = train(fit, val, train_config, variant)
                row = evaluation_row(wig, variant, params, test)
                row["seed"] = seed
                rows.append(row)
    return rows


def ablation_summary(rows: Sequence[Row]) -> Dict[str, float]:
    """Ordering count and mean relative improvement of the fused variant."""
    runs: Dict[Tuple[object, object], Dict[str, float]] = {}
    for row in rows:
        runs.setdefault((row["wig"], row.get("seed")), {})[str(row["variant"])] = float(
            row["rmse_total"]
        )
    complete = [r for r in runs.values() if all(v.value in r for v in VARIANT_ORDER)]
    ordered = sum(
        1
        for r in complete
        if r[Variant.FUSED.value] < r[Variant.DEPTH_ONLY.value] < r[Variant.LOAD_ONLY.value]
    )

    def improvement(other: Variant) -> float:
        gains = [1.0 - r[Variant.FUSED.value] / r[other.value] for r in complete if r[other.value] > 0]
        return float(np.mean(gains)) if gains else 0.0

    return {
        "runs": len(complete),
        "ordered_runs": ordered,
        "improvement_over_depth_only": improvement(Variant.DEPTH_ONLY),
        "improvement_over_load_only": improvement(Variant.LOAD_ONLY),
    }


def mode_comparison(
    config: GlobalConfig,
    spec: TaskSpec,
    estimator: ForceEstimator,
    seed: Optional[int] = None,
    wig: Optional[str] = None,
) -> List[Row]:
    """Paired force-feedback and vision-only runs of one task with equal seeds."""
    rows: List[Row] = []
    for mode in (FeedbackMode.FORCE_FEEDBACK, FeedbackMode.VISION_ONLY):
        try:
            result = run_task(spec, mode, config, estimator, seed, wig)
        except TaskAbort as exc:
            logger.error("%s run aborted", mode.value)
            result = exc.result
        rows.append(dict(result.metrics))
    return rows


def inference_budget(
    params: EstimatorParams, frame: DepthFrame, q: ActuatorLoad, repeats: int = 20
) -> float:
    """Median wall time of one single-sample predict, in seconds."""
    if repeats < 1:
        raise ContractViolation("repeats must be at least 1")
    predict(params, frame, q)
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        predict(params, frame, q)
        times.append(time.perf_counter() - start)
    return float(np.median(times))
