"""CLI interface for moe-sim."""

import functools
import logging
import sys
from typing import Dict, List, Optional, Sequence

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from .config import load_config, update_section
from .control import LearnedEstimator, TaskSpec, run_task, task_head
from .dataset import collect as collect_dataset
from .errors import MoeSimError, TaskAbort
from .estimator import load_params, save_params, train, write_history
from .experiments import (
    ablation_summary,
    estimator_ablation,
    evaluate_checkpoints,
    grasp_compare,
    mode_comparison,
    train_val_test,
)
from .exporter import DataExporter, load_demonstration
from .models import Approach, DemoStyle, FeedbackMode, GlobalConfig, TaskKind, Variant
from .scene import synth_demonstration
from .storage import read_dataset, write_dataset

console = Console(stderr=True)
logger = logging.getLogger("moe_sim")

COMB_DURATION = 38.0


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def _config(ctx: click.Context) -> GlobalConfig:
    """Load the configuration on first use so that --help never reads files."""
    obj = ctx.find_root().obj
    if obj.get("config") is None:
        obj["config"] = load_config(obj["path"], obj["overrides"], obj["seed"])
    return obj["config"]


def handle_errors(func):
    """Report moe-sim errors on stderr and exit with the error's code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except MoeSimError as exc:
            console.print(f"[red]Error: {exc}[/red]")
            sys.exit(exc.exit_code)

    return wrapper


def _split_list(text: str, cast=str) -> List:
    return [cast(item.strip()) for item in text.split(",") if item.strip()]


def _print_rows(title: str, rows: Sequence[Dict[str, object]]) -> None:
    if not rows:
        return
    table = Table(title=title)
    for key in rows[0]:
        table.add_column(str(key), style="cyan" if key in ("wig", "variant", "end_effector") else None)
    for row in rows:
        table.add_row(*(f"{v:.4g}" if isinstance(v, float) else str(v) for v in row.values()))
    console.print(table)


def _progress() -> Progress:
    return Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("{task.completed}/{task.total}"),
        TimeElapsedColumn(),
        console=console,
    )


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON or YAML config")
@click.option("--set", "overrides", multiple=True, help="Dotted override, e.g. scene.head.h_hair=0.015")
@click.option("--seed", type=int, help="Override every seed in the configuration")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.pass_context
def main(ctx, config_path, overrides, seed, verbose):
    """moe-sim - soft-finger hair manipulation with learned force feedback."""
    _setup_logging(verbose)
    ctx.obj = {"path": config_path, "overrides": list(overrides), "seed": seed, "config": None}


@main.command("grasp-compare")
@click.option("--depths", help="Comma-separated press depths in mm (default from config)")
@click.option("--wig", help="Wig preset for the head")
@click.option("--output", "-o", required=True, help="Output table (.csv, .json or .yaml)")
@click.pass_context
@handle_errors
def grasp_compare_cmd(ctx, depths, wig, output):
    """Compare peak head force of the rigid gripper and the soft fingers."""
    config = _config(ctx)
    depths_mm = _split_list(depths, float) if depths else list(config.mechanics.grasp_depths_mm)
    with console.status("Pressing..."):
        rows = grasp_compare(config, depths_mm, wig)
    DataExporter().export_table(rows, output)
    _print_rows("Grasp comparison", rows)
    console.print(f"[green]Wrote {len(rows)} rows to {output}[/green]")


@main.command()
@click.option("--wig", help="Wig preset (default from sampler config)")
@click.option("--episodes", type=int, help="Number of episodes")
@click.option("--workers", type=int, help="Worker threads")
@click.option("--output", "-o", required=True, help="Dataset file")
@click.pass_context
@handle_errors
def collect(ctx, wig, episodes, workers, output):
    """Collect a self-labelled dataset against the simulated head."""
    config = _config(ctx)
    update = {
        k: v for k, v in (("wig", wig), ("n_episodes", episodes), ("workers", workers)) if v is not None
    }
    sampler = update_section(config.sampler, update, "sampler")
    with _progress() as progress:
        task = progress.add_task(f"Collecting {sampler.wig}", total=sampler.n_episodes)
        dataset = collect_dataset(
            sampler, config.scene, config.camera, config.current_model, config.mechanics,
            on_episode=lambda _: progress.advance(task),
        )
    write_dataset(dataset, output)
    console.print(
        f"[green]Wrote {dataset.count} samples ({dataset.skipped} episodes skipped) to {output}[/green]"
    )


@main.command("train")
@click.option("--dataset", "dataset_path", required=True, help="Dataset file")
@click.option(
    "--variant",
    type=click.Choice([v.value for v in Variant]),
    default=Variant.FUSED.value,
    help="Estimator variant",
)
@click.option("--output", "-o", required=True, help="Checkpoint file")
@click.option("--history", help="Loss history CSV")
@click.pass_context
@handle_errors
def train_cmd(ctx, dataset_path, variant, output, history):
    """Train a force estimator on the training episodes of a dataset."""
    config = _config(ctx)
    dataset = read_dataset(dataset_path)
    fit, val, _ = train_val_test(dataset, config.train.test_fraction, config.train.seed)
    with _progress() as progress:
        task = progress.add_task(f"Training {variant}", total=config.train.epochs)
        params, losses = train(
            fit, val, config.train, Variant(variant),
            on_epoch=lambda *_: progress.advance(task),
        )
    save_params(params, output)
    if history:
        write_history(losses, history)
    console.print(f"[green]Saved {variant} estimator to {output}[/green]")


@main.command("eval")
@click.option("--dataset", "dataset_paths", multiple=True, required=True, help="Dataset file (repeatable)")
@click.option("--checkpoint", "checkpoints", multiple=True, required=True, help="Checkpoint (repeatable)")
@click.option("--output", "-o", required=True, help="RMSE table")
@click.pass_context
@handle_errors
def eval_cmd(ctx, dataset_paths, checkpoints, output):
    """Held-out RMSE of each checkpoint on the test episodes of datasets of its training wig."""
    config = _config(ctx)
    models = [load_params(path) for path in checkpoints]
    datasets = [read_dataset(path) for path in dataset_paths]
    rows = evaluate_checkpoints(models, datasets, config.train.test_fraction, config.train.seed)
    DataExporter().export_table(rows, output)
    _print_rows("Held-out RMSE [N]", rows)


def _task_spec(config: GlobalConfig, task: str, approach: str, demo: Optional[str], style: str, duration: float, wig):
    kind = TaskKind(task)
    demonstration = None
    if kind is TaskKind.COMB:
        if demo:
            demonstration = load_demonstration(demo)
        else:
            head = task_head(config, wig)
            demonstration = synth_demonstration(head, DemoStyle(style), duration, config.controller.seed)
    return TaskSpec(
        kind,
        Approach(approach),
        demonstration,
        pat_count=config.controller.pat_count,
        grasp_hold=config.controller.grasp_hold,
    )


def task_options(func):
    options = [
        click.option("--task", type=click.Choice([k.value for k in TaskKind]), required=True),
        click.option("--approach", type=click.Choice([a.value for a in Approach]), default="top"),
        click.option("--checkpoint", help="Trained estimator (required for force feedback)"),
        click.option("--demo", help="Demonstration CSV (comb); synthesized when omitted"),
        click.option("--demo-style", type=click.Choice([s.value for s in DemoStyle]), default="arc"),
        click.option("--duration", type=float, default=COMB_DURATION, help="Synthesized demo length [s]"),
        click.option("--wig", help="Wig preset for the head (default: sampler.wig)"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@main.command("run-task")
@task_options
@click.option("--mode", type=click.Choice([m.value for m in FeedbackMode]), default="force-feedback")
@click.option("--trace", "trace_path", required=True, help="Trace CSV")
@click.option("--metrics", "metrics_path", required=True, help="Metrics summary (.json or .yaml)")
@click.pass_context
@handle_errors
def run_task_cmd(ctx, task, approach, checkpoint, demo, demo_style, duration, wig, mode, trace_path, metrics_path):
    """Run one hair-care task and write its force trace and metrics."""
    config = _config(ctx)
    spec = _task_spec(config, task, approach, demo, demo_style, duration, wig)
    estimator = LearnedEstimator(load_params(checkpoint)) if checkpoint else None
    exporter = DataExporter()
    try:
        with console.status(f"Running {task} ({mode})..."):
            result = run_task(spec, FeedbackMode(mode), config, estimator, wig=wig)
    except TaskAbort as exc:
        exporter.export_trace(exc.result, trace_path)
        exporter.export_metrics(exc.result, metrics_path)
        raise
    exporter.export_trace(result, trace_path)
    exporter.export_metrics(result, metrics_path)
    _print_rows(f"{task} / {mode}", [result.metrics])


@main.command("compare-modes")
@task_options
@click.option("--output", "-o", required=True, help="Metrics table")
@click.pass_context
@handle_errors
def compare_modes_cmd(ctx, task, approach, checkpoint, demo, demo_style, duration, wig, output):
    """Run a task with and without force feedback under equal seeds."""
    config = _config(ctx)
    if not checkpoint:
        raise click.UsageError("--checkpoint is required to compare against force feedback")
    spec = _task_spec(config, task, approach, demo, demo_style, duration, wig)
    estimator = LearnedEstimator(load_params(checkpoint))
    with console.status("Running paired tasks..."):
        rows = mode_comparison(config, spec, estimator, wig=wig)
    DataExporter().export_table(rows, output)
    _print_rows("Mode comparison", rows)


@main.command()
@click.option("--wigs", default="wig1,wig2,wig3", help="Comma-separated wig presets")
@click.option("--seeds", default="0,1,2", help="Comma-separated training seeds")
@click.option("--output", "-o", required=True, help="RMSE table")
@click.pass_context
@handle_errors
def ablation(ctx, wigs, seeds, output):
    """Collect, train and evaluate every estimator variant per wig and seed."""
    config = _config(ctx)
    wig_list, seed_list = _split_list(wigs), _split_list(seeds, int)
    with _progress() as progress:
        task = progress.add_task("Ablation", total=len(wig_list) * len(seed_list) * len(Variant))
        rows = estimator_ablation(
            config, wig_list, seed_list, on_run=lambda *_: progress.advance(task)
        )
    DataExporter().export_table(rows, output)
    _print_rows("Estimator ablation", rows)
    summary = ablation_summary(rows)
    console.print(
        f"fused < depth-only < load-only in {summary['ordered_runs']} of {summary['runs']} runs; "
        f"mean gain {summary['improvement_over_depth_only']:.1%} over depth-only, "
        f"{summary['improvement_over_load_only']:.1%} over load-only"
    )


@main.command("export-demo")
@click.option("--style", type=click.Choice([s.value for s in DemoStyle]), default="arc")
@click.option("--duration", type=float, default=COMB_DURATION, help="Length [s]")
@click.option("--wig", help="Wig preset for the head (default: sampler.wig)")
@click.option("--output", "-o", required=True, help="Demonstration CSV")
@click.pass_context
@handle_errors
def export_demo(ctx, style, duration, wig, output):
    """Write a synthetic combing demonstration as t,x,y,z CSV."""
    config = _config(ctx)
    head = task_head(config, wig)
    demo = synth_demonstration(head, DemoStyle(style), duration, config.controller.seed)
    DataExporter().export_demonstration(demo, output)
    console.print(f"[green]Wrote {len(demo)} keypoints to {output}[/green]")


if __name__ == "__main__":
    main()
