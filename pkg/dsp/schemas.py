"""Shared dataclasses passed between the environment, trainer and evaluation layers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class Trajectory:
    task: str
    seed: int
    observations: np.ndarray
    actions: np.ndarray
    perturbed_mask: np.ndarray
    success: bool

    def __post_init__(self) -> None:
        if self.observations.ndim != 2 or self.actions.ndim != 2:
            raise ValidationError("observations and actions must be 2-D arrays")
        steps = self.actions.shape[0]
        if self.observations.shape[0] != steps + 1:
            raise ValidationError(
                f"trajectory with {steps} actions needs {steps + 1} observations, "
                f"got {self.observations.shape[0]}"
            )
        if self.perturbed_mask.shape != (steps,):
            raise ValidationError(
                f"perturbed_mask has length {self.perturbed_mask.shape[0]}, expected {steps}"
            )

    @property
    def length(self) -> int:
        return int(self.actions.shape[0])

    @property
    def is_clean(self) -> bool:
        return not bool(self.perturbed_mask.any())

    def same_as(self, other: "Trajectory") -> bool:
        return (
            self.task == other.task
            and self.seed == other.seed
            and self.success == other.success
            and np.array_equal(self.observations, other.observations)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.perturbed_mask, other.perturbed_mask)
        )


@dataclass(frozen=True, eq=False)
class FilterReport:
    """One filtering decision over a batch. Positive means rejected as perturbed."""

    delta: np.ndarray
    gamma: float
    keep_mask: np.ndarray
    truth_mask: np.ndarray
    recall: float
    accuracy: float
    step: int = 0

    @property
    def kept_fraction(self) -> float:
        return float(self.keep_mask.mean()) if self.keep_mask.size else 0.0

    @property
    def all_rejected(self) -> bool:
        return not bool(self.keep_mask.any())


@dataclass
class LossPoint:
    step: int
    loss: float
    stage: int


@dataclass
class StageResult:
    losses: List[LossPoint] = field(default_factory=list)
    reports: List[FilterReport] = field(default_factory=list)
    skipped_batches: int = 0
    warnings: List[str] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class EvalSummary:
    successes: np.ndarray
    n_episodes: int
    iqm: float
    ci_low: float
    ci_high: float
    seeds: List[int]
    task: Optional[str] = None

    @property
    def success_rate(self) -> float:
        return float(self.successes.mean()) if self.successes.size else 0.0

    def to_record(self) -> Dict[str, object]:
        return {
            "task": self.task,
            "n_episodes": self.n_episodes,
            "success_rate": self.success_rate,
            "iqm": self.iqm,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "successes": [int(value) for value in self.successes],
            "seeds": list(self.seeds),
        }


__all__ = ["Trajectory", "FilterReport", "LossPoint", "StageResult", "EvalSummary"]
