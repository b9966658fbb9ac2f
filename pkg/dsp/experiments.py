"""End-to-end runs: train both stages, evaluate, and write the run directory. Also sweeps."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from .config import RunConfig, dump_config
from .datasets import collect_demos, mix, perturb_dataset, take
from .diffusion import make_vp_schedule
from .envs import get_task
from .errors import ConfigurationError, ValidationError
from .eval_harness import evaluate_policy, mode_label, window_filter_quality
from .policy import PolicyConfig, build_policy, save_policy
from .schemas import StageResult, Trajectory
from .trainer import Stage2Mode, train_stage1, train_stage2

LOGGER = logging.getLogger(__name__)

CONFIG_ECHO = "config.toml"
STAGE1_CKPT = "stage1.ckpt"
FINAL_CKPT = "final.ckpt"
METRICS_LOG = "metrics.log"
SUMMARY = "summary.jsonl"
SWEEP_PARAMS = ("eta", "frac", "n_clean")


def _check_task(trajectories: Sequence[Trajectory], task: str, what: str) -> None:
    others = sorted({traj.task for traj in trajectories if traj.task != task})
    if others:
        raise ValidationError(f"{what} data holds {others} trajectories but the run task is {task}")


def _metric_lines(stage: int, result: StageResult, eval_every: int) -> List[Dict[str, Any]]:
    reports = {report.step: report for report in result.reports}
    losses = {point.step: point.loss for point in result.losses}
    steps = sorted(set(losses) | {s for s in reports if s == 0 or s % eval_every == 0})
    lines = []
    for step in steps:
        line: Dict[str, Any] = {"stage": stage, "step": step, "loss": losses.get(step)}
        report = reports.get(step)
        if report is not None:
            line.update(
                gamma=report.gamma,
                recall=report.recall,
                accuracy=report.accuracy,
                kept_fraction=report.kept_fraction,
            )
        lines.append(line)
    return lines


def _write_jsonl(path: Path, records: Sequence[Dict[str, Any]]) -> None:
    path.write_text("".join(json.dumps(record, sort_keys=True) + "\n" for record in records))


def run_pipeline(
    config: RunConfig,
    clean: Sequence[Trajectory],
    perturbed: Sequence[Trajectory],
    out_dir: Path | str,
) -> Dict[str, Any]:
    """Train, checkpoint, evaluate and summarise one run into ``out_dir``."""
    out_dir = Path(out_dir)
    task = config.run.task
    spec = get_task(task).spec
    clean = take(clean, config.data.n_clean)
    perturbed = take(perturbed, config.data.n_perturbed)
    _check_task(clean, task, "clean")
    _check_task(perturbed, task, "perturbed")

    train_config = config.train_config()
    schedule = make_vp_schedule(config.policy.T, config.policy.beta_start, config.policy.beta_end)
    params = build_policy(
        PolicyConfig(
            obs_dim=spec.obs_dim,
            act_dim=spec.action_dim,
            hidden_dim=config.policy.hidden_dim,
            embed_dim=config.policy.embed_dim,
            T=config.policy.T,
            seed=config.run.seed,
        )
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(config, out_dir / CONFIG_ECHO)
    LOGGER.info("run %s: %d clean + %d perturbed trajectories", out_dir, len(clean), len(perturbed))

    first = train_stage1(train_config, mix(clean, []), params, schedule)
    save_policy(out_dir / STAGE1_CKPT, first.params)
    second = train_stage2(first.params, mix(clean, perturbed), train_config, schedule)
    mode = Stage2Mode(train_config.stage2_mode)
    final = first.params if mode is Stage2Mode.NONE else second.params
    if mode is not Stage2Mode.NONE:
        save_policy(out_dir / FINAL_CKPT, final)
    _write_jsonl(
        out_dir / METRICS_LOG,
        _metric_lines(1, first.stage, train_config.eval_every)
        + _metric_lines(2, second.stage, train_config.eval_every),
    )

    summary = evaluate_policy(
        final,
        task,
        config.eval.n_episodes,
        config.eval.base_seed,
        schedule=schedule,
        n_resamples=config.eval.n_resamples,
        level=config.eval.level,
        bootstrap_seed=config.eval.bootstrap_seed,
    )
    record: Dict[str, Any] = summary.to_record()
    record.update(
        n_clean=len(clean),
        n_perturbed=len(perturbed),
        stage2_mode=mode.value,
        threshold_mode=train_config.threshold_mode.value,
        label=mode_label(mode.value, train_config.threshold_mode.value),
        seed=config.run.seed,
        skipped_batches=second.stage.skipped_batches,
        warnings=second.stage.warnings,
    )
    if second.stage.reports:
        record["filter_quality"] = window_filter_quality(second.stage.reports)
    _write_jsonl(out_dir / SUMMARY, [record])
    LOGGER.info("run %s finished: iqm %.3f [%.3f, %.3f]", out_dir, summary.iqm, summary.ci_low, summary.ci_high)
    return record


@dataclass
class SweepResult:
    records: List[Dict[str, Any]]
    medians: pd.DataFrame


def sweep(
    base: RunConfig,
    param: str,
    values: Sequence[float],
    seeds: Sequence[int],
    modes: Sequence[str],
    out_root: Path | str,
    *,
    demos: Optional[Sequence[Trajectory]] = None,
) -> SweepResult:
    """Repeat :func:`run_pipeline` over a grid of one setting, modes and seeds.

    Clean and perturbed trajectories are disjoint slices of ``demos``: the first
    ``n_clean`` stay clean, the next ``n_perturbed`` are perturbed with the swept setting.
    """
    if param not in SWEEP_PARAMS:
        raise ConfigurationError(f"cannot sweep {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    if not values or not seeds or not modes:
        raise ConfigurationError("a sweep needs at least one value, seed and mode")
    try:
        modes = [Stage2Mode(mode) for mode in modes]
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    out_root = Path(out_root)
    n_perturbed = base.data.n_perturbed if base.data.n_perturbed is not None else 25
    n_clean_default = base.data.n_clean if base.data.n_clean is not None else 25
    largest_clean = max(int(v) for v in values) if param == "n_clean" else n_clean_default
    if demos is None:
        demos = collect_demos(base.run.task, largest_clean + n_perturbed, seed=0)
    if len(demos) < largest_clean + n_perturbed:
        raise ConfigurationError(
            f"sweep needs {largest_clean + n_perturbed} demonstrations, got {len(demos)}"
        )
    pool = list(demos[largest_clean : largest_clean + n_perturbed])

    records: List[Dict[str, Any]] = []
    for value in values:
        n_clean = int(value) if param == "n_clean" else n_clean_default
        perturb = base.perturb.model_copy(update={param: float(value)}) if param != "n_clean" else base.perturb
        for seed in seeds:
            perturbed = perturb_dataset(
                pool,
                frac=perturb.frac,
                eta=perturb.eta,
                sigma_sq=perturb.sigma_sq,
                flip_prob=perturb.flip_prob,
                seed=seed,
                replay=perturb.replay,
                sigma_is_std=perturb.sigma_is_std,
            )
            for mode in modes:
                config = base.model_copy(
                    update={
                        "run": base.run.model_copy(update={"seed": seed}),
                        "data": base.data.model_copy(update={"n_clean": n_clean, "n_perturbed": n_perturbed}),
                        "perturb": perturb,
                        "train": base.train.model_copy(update={"stage2_mode": mode}),
                    }
                )
                run_dir = out_root / f"{param}={value}" / mode.value / f"seed={seed}"
                record = run_pipeline(config, demos[:n_clean], perturbed, run_dir)
                record[param] = value
                records.append(record)

    frame = pd.DataFrame(records)
    medians = (
        frame.groupby([param, "label"], sort=True)["iqm"].median().unstack("label").reset_index()
    )
    medians.columns.name = None
    _write_jsonl(out_root / "sweep.jsonl", records)
    return SweepResult(records=records, medians=medians)


__all__ = [
    "CONFIG_ECHO",
    "STAGE1_CKPT",
    "FINAL_CKPT",
    "METRICS_LOG",
    "SUMMARY",
    "SWEEP_PARAMS",
    "SweepResult",
    "run_pipeline",
    "sweep",
]
