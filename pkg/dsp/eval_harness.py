"""Policy evaluation and the reporting statistics: success, IQM, bootstrap CIs, comparisons."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .diffusion import NoiseSchedule, make_vp_schedule, sample_actions
from .envs import Controller, get_task, reset, rollout, step
from .errors import ConfigurationError, ShapeError, StateError, ValidationError
from .policy import PolicyParams
from .schemas import EvalSummary, FilterReport

LOGGER = logging.getLogger(__name__)

EVAL_BASE_SEED = 10000
_EVAL_STREAM = 3
MODE_LABELS = {"none": "stage1", "naive": "perturbed", "offline": "offline", "online": "online"}
COLUMN_ORDER = ["stage1", "perturbed", "offline", "online", "st_offline", "st_online"]
KEY_COLUMNS = ("task", "composition")


def episode_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, _EVAL_STREAM])


def _policy_successes(
    params: PolicyParams, task: str, seeds: Sequence[int], schedule: NoiseSchedule
) -> np.ndarray:
    """Run every episode in lockstep, one batched sampler call per control step."""
    env = get_task(task)
    if params.obs_dim != env.spec.obs_dim or params.act_dim != env.spec.action_dim:
        raise ShapeError(
            f"policy maps {params.obs_dim}-d observations to {params.act_dim}-d actions, "
            f"{env.slug.value} needs {env.spec.obs_dim} -> {env.spec.action_dim}"
        )
    rngs = [episode_rng(seed) for seed in seeds]
    started = [reset(env, seed) for seed in seeds]
    states = [state for state, _ in started]
    observations = [obs for _, obs in started]
    active = list(range(len(seeds)))
    successes = np.zeros(len(seeds), dtype=np.int64)
    while active:
        actions = sample_actions(
            params,
            np.stack([observations[i] for i in active]),
            schedule,
            [rngs[i] for i in active],
        )
        still_running = []
        for row, i in enumerate(active):
            states[i], observations[i], done, success = step(env, states[i], actions[row])
            if done:
                successes[i] = int(success)
            else:
                still_running.append(i)
        active = still_running
    return successes


def evaluate_policy(
    policy: Union[PolicyParams, Controller],
    task: str,
    n_episodes: int,
    base_seed: int = EVAL_BASE_SEED,
    *,
    schedule: Optional[NoiseSchedule] = None,
    n_resamples: int = 10000,
    level: float = 0.95,
    bootstrap_seed: int = 0,
) -> EvalSummary:
    """Success over seeds ``base_seed .. base_seed + n_episodes - 1``.

    ``policy`` is either trained parameters or a plain controller such as the scripted expert.
    """
    if n_episodes < 1:
        raise ConfigurationError(f"n_episodes must be >= 1, got {n_episodes}")
    seeds = list(range(base_seed, base_seed + n_episodes))
    if isinstance(policy, PolicyParams):
        schedule = schedule or make_vp_schedule(policy.T)
        successes = _policy_successes(policy, task, seeds, schedule)
    else:
        successes = np.array([int(rollout(policy, task, seed).success) for seed in seeds])
    point = iqm(successes)
    low, high = bootstrap_ci(successes, n_resamples, level, bootstrap_seed)
    LOGGER.info("%s: %d/%d episodes succeeded", task, int(successes.sum()), n_episodes)
    return EvalSummary(
        successes=successes,
        n_episodes=n_episodes,
        iqm=point,
        ci_low=min(low, point),
        ci_high=max(high, point),
        seeds=seeds,
        task=str(task),
    )


def _trim(n: int) -> int:
    return int(np.floor(0.25 * n))


def iqm(values: Iterable[float]) -> float:
    """Mean after dropping floor(n/4) values from each end of the sorted sample."""
    ordered = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    n = ordered.size
    if n == 0:
        raise StateError("iqm of an empty sample")
    cut = _trim(n)
    return float(ordered[cut : n - cut].mean())


def bootstrap_ci(
    values: Iterable[float], n_resamples: int, level: float, seed: int
) -> Tuple[float, float]:
    """Percentile bootstrap interval for the IQM."""
    sample = np.asarray(values, dtype=np.float64).reshape(-1)
    if sample.size == 0:
        raise StateError("bootstrap of an empty sample")
    if not 0.0 < level < 1.0:
        raise ConfigurationError(f"level must lie in (0, 1), got {level}")
    if n_resamples < 1:
        raise ConfigurationError(f"n_resamples must be >= 1, got {n_resamples}")
    rng = np.random.default_rng(seed)
    n = sample.size
    draws = np.sort(sample[rng.integers(0, n, size=(n_resamples, n))], axis=1)
    cut = _trim(n)
    stats = draws[:, cut : n - cut].mean(axis=1)
    tail = (1.0 - level) / 2.0
    low, high = np.quantile(stats, [tail, 1.0 - tail], method="inverted_cdf")
    return float(low), float(high)


def filter_metrics(keep_mask: np.ndarray, truth_mask: np.ndarray) -> Tuple[float, float]:
    """Recall and accuracy of rejection as a perturbation detector.

    Recall is 1 when the batch holds no perturbed samples.
    """
    keep = np.asarray(keep_mask, dtype=bool)
    truth = np.asarray(truth_mask, dtype=bool)
    if keep.shape != truth.shape:
        raise ValidationError(f"keep mask {keep.shape} and truth mask {truth.shape} differ")
    if keep.size == 0:
        raise StateError("filter metrics of an empty batch")
    rejected = ~keep
    true_pos = int(np.count_nonzero(rejected & truth))
    false_neg = int(np.count_nonzero(keep & truth))
    true_neg = int(np.count_nonzero(keep & ~truth))
    recall = 1.0 if true_pos + false_neg == 0 else true_pos / (true_pos + false_neg)
    return float(recall), float((true_pos + true_neg) / keep.size)


def window_filter_quality(reports: Sequence[FilterReport], fraction: float = 0.1) -> Dict[str, Dict[str, float]]:
    """Average recall, accuracy and kept fraction over the first and last windows of a run."""
    if not reports:
        raise StateError("no filter reports to summarise")
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"fraction must lie in (0, 1], got {fraction}")
    width = max(1, int(np.floor(fraction * len(reports))))

    def window(chunk: Sequence[FilterReport]) -> Dict[str, float]:
        return {
            "recall": float(np.mean([report.recall for report in chunk])),
            "accuracy": float(np.mean([report.accuracy for report in chunk])),
            "kept_fraction": float(np.mean([report.kept_fraction for report in chunk])),
        }

    return {"first": window(reports[:width]), "last": window(reports[-width:])}


def mode_label(stage2_mode: str, threshold_mode: str = "mean") -> str:
    label = MODE_LABELS.get(stage2_mode)
    if label is None:
        raise ValidationError(f"unknown stage-2 mode {stage2_mode!r}")
    if threshold_mode == "mean_minus_std" and stage2_mode in ("online", "offline"):
        label = f"st_{label}"
    return label


@dataclass
class ComparisonTable:
    long: pd.DataFrame
    wide: pd.DataFrame

    def to_text(self) -> str:
        return self.wide.to_string()

    def to_jsonl(self) -> str:
        return self.long.to_json(orient="records", lines=True)


def _format_cell(point: float, low: float, high: float) -> str:
    halfwidth = max(point - low, high - point)
    return f"{point:.3f} ±{halfwidth:.3f}"


def compare_runs(records: Sequence[Mapping[str, object]], group_by: Sequence[str] = ()) -> ComparisonTable:
    """One row per (task, composition), one column per training mode.

    Key columns not listed in ``group_by`` must take a single value across ``records``.
    """
    if not records:
        raise ValidationError("no run summaries to compare")
    unknown = [name for name in group_by if name not in KEY_COLUMNS]
    if unknown:
        raise ValidationError(f"cannot group by {unknown}; choose from {list(KEY_COLUMNS)}")
    required = ("task", "n_clean", "n_perturbed", "stage2_mode", "iqm", "ci_low", "ci_high")
    rows: List[Dict[str, object]] = []
    for index, record in enumerate(records):
        missing = [key for key in required if key not in record]
        if missing:
            raise ValidationError(f"summary record {index} lacks {missing}")
        rows.append(
            {
                "task": str(record["task"]),
                "composition": f"({record['n_clean']},{record['n_perturbed']})",
                "label": mode_label(str(record["stage2_mode"]), str(record.get("threshold_mode", "mean"))),
                "iqm": float(record["iqm"]),
                "ci_low": float(record["ci_low"]),
                "ci_high": float(record["ci_high"]),
            }
        )
    long = pd.DataFrame(rows)
    for column in KEY_COLUMNS:
        if column not in group_by and long[column].nunique() > 1:
            raise ValidationError(
                f"runs mix {column} values {sorted(long[column].unique())}; pass --group-by {column}"
            )
    duplicated = long.duplicated(subset=list(KEY_COLUMNS) + ["label"], keep=False)
    if duplicated.any():
        clashes = long.loc[duplicated, list(KEY_COLUMNS) + ["label"]].drop_duplicates()
        raise ValidationError(f"duplicate runs for {clashes.to_dict(orient='records')}")

    long["cell"] = [
        _format_cell(row.iqm, row.ci_low, row.ci_high) for row in long.itertuples(index=False)
    ]
    wide = long.pivot_table(index=list(KEY_COLUMNS), columns="label", values="cell", aggfunc="first")
    ordered = [name for name in COLUMN_ORDER if name in wide.columns]
    ordered += sorted(name for name in wide.columns if name not in COLUMN_ORDER)
    wide = wide[ordered]
    wide.columns.name = None
    return ComparisonTable(long=long.drop(columns="cell"), wide=wide)


__all__ = [
    "EVAL_BASE_SEED",
    "ComparisonTable",
    "episode_rng",
    "evaluate_policy",
    "iqm",
    "bootstrap_ci",
    "filter_metrics",
    "window_filter_quality",
    "mode_label",
    "compare_runs",
]
