"""Two-stage training: clean-data pretraining, then filtered training on the mixed dataset."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .datasets import Batch, MixedDataset, Source, sample_batch
from .diffusion import NoiseSchedule, sample_actions
from .errors import NumericError, StateError
from .eval_harness import filter_metrics
from .nn_core import AdamWState, adamw_step
from .policy import PolicyParams, policy_gradients
from .schemas import FilterReport, LossPoint, StageResult

LOGGER = logging.getLogger(__name__)

ALL_REJECTED_WARN_FRACTION = 0.5
# rng stream tags, first word after the seed
_TRAIN_STREAM = 1
_FILTER_STREAM = 2


class ThresholdMode(str, Enum):
    MEAN = "mean"
    MEAN_MINUS_STD = "mean_minus_std"


class Stage2Mode(str, Enum):
    ONLINE = "online"
    OFFLINE = "offline"
    NAIVE = "naive"
    NONE = "none"


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    stage1_steps: int = Field(default=10000, ge=0)
    stage2_steps: int = Field(default=10000, ge=0)
    batch_size: int = Field(default=128, gt=0)
    lr: float = Field(default=2e-4, gt=0.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    threshold_mode: ThresholdMode = ThresholdMode.MEAN
    stage2_mode: Stage2Mode = Stage2Mode.ONLINE
    seed: int = 0
    eval_every: int = Field(default=500, gt=0)
    filter_samples: int = Field(default=1, gt=0)

    @model_validator(mode="after")
    def _strict_online_needs_pairs(self) -> "TrainConfig":
        if (
            self.threshold_mode is ThresholdMode.MEAN_MINUS_STD
            and self.stage2_mode is Stage2Mode.ONLINE
            and self.batch_size < 2
        ):
            raise ValueError("online filtering with mean_minus_std needs batch_size >= 2")
        return self


ThresholdFn = Callable[[np.ndarray, ThresholdMode], float]


@dataclass
class TrainResult:
    params: PolicyParams
    stage: StageResult


def _train_rng(config: TrainConfig, stage: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, _TRAIN_STREAM, stage])


def filter_rngs(seed: int, step: int, size: int, repeat: int) -> list:
    """One stream per (sample index, repeat); independent of how the batch is split up."""
    return [np.random.default_rng([seed, _FILTER_STREAM, step, index, repeat]) for index in range(size)]


def _optimizer(params: PolicyParams, config: TrainConfig) -> AdamWState:
    return AdamWState.initial(params, lr=config.lr, weight_decay=config.weight_decay)


def _update(
    params: PolicyParams,
    optimizer: AdamWState,
    batch: Batch,
    schedule: NoiseSchedule,
    rng,
    step: int,
) -> Tuple[PolicyParams, AdamWState, float]:
    try:
        loss, grads = policy_gradients(params, batch.observations, batch.actions, schedule, rng)
        params, optimizer = adamw_step(params, grads, optimizer)
    except NumericError as exc:
        raise NumericError(f"training diverged at step {step}: {exc}", index=step) from exc
    return params, optimizer, loss


def _log_loss(stage: int, step: int, loss: float, config: TrainConfig, result: StageResult) -> None:
    if step % config.eval_every == 0:
        result.losses.append(LossPoint(step=step, loss=loss, stage=stage))
        LOGGER.info("stage %d step %d loss %.6f", stage, step, loss)


def train_stage1(
    config: TrainConfig,
    clean: MixedDataset,
    params: PolicyParams,
    schedule: NoiseSchedule,
) -> TrainResult:
    """Plain denoising training on clean transitions only."""
    result = StageResult()
    if config.stage1_steps == 0:
        return TrainResult(params=params, stage=result)
    if len(clean) == 0:
        raise StateError("stage 1 needs at least one clean transition")
    if clean.perturbed.any() or clean.count(Source.PERTURBED):
        raise StateError("stage 1 data must be clean")
    rng = _train_rng(config, 1)
    optimizer = _optimizer(params, config)
    for step in range(1, config.stage1_steps + 1):
        batch = sample_batch(clean, config.batch_size, rng)
        params, optimizer, loss = _update(params, optimizer, batch, schedule, rng, step)
        _log_loss(1, step, loss, config, result)
    return TrainResult(params=params, stage=result)


def predict_filter_error(
    params: PolicyParams,
    obs: np.ndarray,
    action: np.ndarray,
    schedule: NoiseSchedule,
    rng,
) -> float:
    """Squared distance between one sampled policy action and the recorded action."""
    return float(predict_filter_errors(params, obs[None, :], action[None, :], schedule, [rng])[0])


def predict_filter_errors(
    params: PolicyParams,
    observations: np.ndarray,
    actions: np.ndarray,
    schedule: NoiseSchedule,
    rngs,
) -> np.ndarray:
    predicted = sample_actions(params, observations, schedule, rngs)
    diff = predicted - np.asarray(actions, dtype=np.float64)
    return np.sum(diff * diff, axis=1)


def compute_threshold(deltas: np.ndarray, mode: ThresholdMode | str) -> float:
    """Batch mean, or batch mean minus the Bessel-corrected std. Not clamped."""
    deltas = np.asarray(deltas, dtype=np.float64)
    mode = ThresholdMode(mode)
    if mode is ThresholdMode.MEAN:
        if deltas.size < 1:
            raise StateError("mean threshold needs at least one error")
        return float(deltas.mean())
    if deltas.size < 2:
        raise StateError(f"strict threshold needs at least two errors, got {deltas.size}")
    return float(deltas.mean() - deltas.std(ddof=1))


def classify(delta: np.ndarray, gamma: float, truth: np.ndarray, step: int = 0) -> FilterReport:
    delta = np.asarray(delta, dtype=np.float64)
    keep = delta <= gamma
    truth = np.asarray(truth, dtype=bool)
    recall, accuracy = filter_metrics(keep, truth)
    return FilterReport(
        delta=delta,
        gamma=float(gamma),
        keep_mask=keep,
        truth_mask=truth,
        recall=recall,
        accuracy=accuracy,
        step=step,
    )


def filter_batch(
    params: PolicyParams,
    batch: Batch,
    mode: ThresholdMode | str,
    schedule: NoiseSchedule,
    *,
    seed: int = 0,
    step: int = 0,
    samples: int = 1,
    threshold_fn: ThresholdFn = compute_threshold,
) -> FilterReport:
    """Score every transition by prediction error and keep those at or under the threshold."""
    if len(batch) == 0:
        raise StateError("cannot filter an empty batch")
    deltas = np.zeros(len(batch))
    for repeat in range(samples):
        rngs = filter_rngs(seed, step, len(batch), repeat)
        deltas += predict_filter_errors(params, batch.observations, batch.actions, schedule, rngs)
    deltas /= samples
    gamma = threshold_fn(deltas, ThresholdMode(mode))
    return classify(deltas, gamma, batch.perturbed, step=step)


def _subset(batch: Batch, keep: np.ndarray) -> Batch:
    return Batch(
        observations=batch.observations[keep],
        actions=batch.actions[keep],
        perturbed=batch.perturbed[keep],
        source=batch.source[keep],
    )


def _dataset_subset(dataset: MixedDataset, keep: np.ndarray) -> MixedDataset:
    return MixedDataset(
        observations=dataset.observations[keep],
        actions=dataset.actions[keep],
        perturbed=dataset.perturbed[keep],
        source=dataset.source[keep],
    )


def train_stage2(
    params: PolicyParams,
    mixed: MixedDataset,
    config: TrainConfig,
    schedule: NoiseSchedule,
    *,
    threshold_fn: ThresholdFn = compute_threshold,
) -> TrainResult:
    """Continue training on the mixture according to ``config.stage2_mode``."""
    mode = Stage2Mode(config.stage2_mode)
    result = StageResult()
    if mode is Stage2Mode.NONE or config.stage2_steps == 0:
        return TrainResult(params=params, stage=result)
    if len(mixed) == 0:
        raise StateError("stage 2 needs a nonempty mixed dataset")

    data = mixed
    if mode is Stage2Mode.OFFLINE:
        report = filter_batch(
            params,
            Batch(mixed.observations, mixed.actions, mixed.perturbed, mixed.source),
            config.threshold_mode,
            schedule,
            seed=config.seed,
            step=0,
            samples=config.filter_samples,
            threshold_fn=threshold_fn,
        )
        result.reports.append(report)
        LOGGER.info(
            "offline filter kept %d/%d transitions (recall %.3f, accuracy %.3f)",
            int(report.keep_mask.sum()),
            len(mixed),
            report.recall,
            report.accuracy,
        )
        if report.all_rejected:
            raise StateError("offline filtering rejected every transition")
        data = _dataset_subset(mixed, report.keep_mask)

    rng = _train_rng(config, 2)
    optimizer = _optimizer(params, config)
    for step in range(1, config.stage2_steps + 1):
        batch = sample_batch(data, config.batch_size, rng)
        if mode is Stage2Mode.ONLINE:
            report = filter_batch(
                params,
                batch,
                config.threshold_mode,
                schedule,
                seed=config.seed,
                step=step,
                samples=config.filter_samples,
                threshold_fn=threshold_fn,
            )
            result.reports.append(report)
            if report.all_rejected:
                result.skipped_batches += 1
                LOGGER.debug("step %d: every sample rejected, no update", step)
                continue
            batch = _subset(batch, report.keep_mask)
        params, optimizer, loss = _update(params, optimizer, batch, schedule, rng, step)
        _log_loss(2, step, loss, config, result)

    if mode is Stage2Mode.ONLINE:
        skipped = result.skipped_batches / config.stage2_steps
        if skipped > ALL_REJECTED_WARN_FRACTION:
            message = f"{skipped:.0%} of stage-2 batches were rejected entirely"
            result.warnings.append(message)
            LOGGER.warning(message)
    return TrainResult(params=params, stage=result)


def train(
    config: TrainConfig,
    params: PolicyParams,
    clean: MixedDataset,
    mixed: MixedDataset,
    schedule: NoiseSchedule,
    *,
    threshold_fn: Optional[ThresholdFn] = None,
) -> Tuple[TrainResult, TrainResult]:
    """Both stages back to back; returns the per-stage results."""
    first = train_stage1(config, clean, params, schedule)
    second = train_stage2(
        first.params, mixed, config, schedule, threshold_fn=threshold_fn or compute_threshold
    )
    return first, second


__all__ = [
    "ThresholdMode",
    "Stage2Mode",
    "TrainConfig",
    "TrainResult",
    "filter_rngs",
    "train_stage1",
    "predict_filter_error",
    "predict_filter_errors",
    "compute_threshold",
    "classify",
    "filter_batch",
    "train_stage2",
    "train",
]
