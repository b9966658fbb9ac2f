"""Demonstration data: collection, perturbation, mixing, batching and JSONL persistence."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict
from pydantic import ValidationError as PydanticValidationError

from .envs import execute, expert_controller, get_task, rollout
from .errors import ConfigurationError, DSPError, ParseError, StateError, ValidationError
from .schemas import Trajectory

LOGGER = logging.getLogger(__name__)

FORMAT_VERSION = 1
EVAL_SEED_START = 10000


class Source(IntEnum):
    CLEAN = 0
    PERTURBED = 1


@dataclass(frozen=True, eq=False)
class MixedDataset:
    observations: np.ndarray
    actions: np.ndarray
    perturbed: np.ndarray
    source: np.ndarray

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    def count(self, source: Source) -> int:
        return int(np.count_nonzero(self.source == source))


@dataclass(frozen=True, eq=False)
class Batch:
    observations: np.ndarray
    actions: np.ndarray
    perturbed: np.ndarray
    source: np.ndarray

    def __len__(self) -> int:
        return int(self.actions.shape[0])


class TrajectoryRecord(BaseModel):
    """One line of a dataset file."""

    model_config = ConfigDict(extra="forbid")

    v: Literal[1]
    task: str
    seed: int
    observations: List[List[float]]
    actions: List[List[float]]
    perturbed_mask: List[bool]
    success: bool


def collect_demos(task: str, n_episodes: int, seed: int) -> List[Trajectory]:
    """Expert rollouts on seeds ``seed .. seed + n_episodes - 1``; every one must succeed."""
    if n_episodes < 0:
        raise ConfigurationError(f"n_episodes must be >= 0, got {n_episodes}")
    controller = expert_controller(task)
    if n_episodes and seed + n_episodes > EVAL_SEED_START:
        LOGGER.warning(
            "demonstration seeds reach %d and overlap the evaluation range (>= %d)",
            seed + n_episodes - 1,
            EVAL_SEED_START,
        )
    demos: List[Trajectory] = []
    for episode_seed in range(seed, seed + n_episodes):
        traj = rollout(controller, task, episode_seed)
        if not traj.success:
            raise StateError(f"scripted expert failed on {task} seed {episode_seed}")
        demos.append(traj)
    LOGGER.info("collected %d %s demonstrations", len(demos), task)
    return demos


def perturb_trajectory(
    traj: Trajectory,
    frac: float,
    eta: float,
    sigma_sq: float,
    flip_prob: float,
    rng,
    *,
    sigma_is_std: bool = False,
) -> Trajectory:
    """Add large-mean Gaussian offsets to a ``frac`` share of the actions.

    Each chosen step gets one sign (``+`` with probability ``flip_prob``) and
    per-coordinate noise ``N(sign * eta, sigma)``. The result is clipped to the action box,
    which is what the environment executes; observations are left as recorded.
    """
    if not 0.0 <= frac <= 1.0:
        raise ConfigurationError(f"frac must lie in [0, 1], got {frac}")
    if sigma_sq < 0:
        raise ConfigurationError(f"sigma_sq must be >= 0, got {sigma_sq}")
    if not traj.is_clean:
        raise ValidationError(f"trajectory {traj.task}/{traj.seed} is already perturbed")
    steps = traj.length
    n_chosen = int(np.floor(frac * steps + 0.5))
    chosen = np.sort(np.asarray(rng.choice(steps, size=n_chosen, replace=False), dtype=np.int64))
    std = float(sigma_sq) if sigma_is_std else float(np.sqrt(sigma_sq))

    actions = traj.actions.copy()
    mask = np.zeros(steps, dtype=bool)
    for k in chosen:
        sign = 1.0 if rng.random() < flip_prob else -1.0
        offset = np.asarray(rng.normal(sign * eta, std, size=actions.shape[1]))
        actions[k] = np.clip(actions[k] + offset, -1.0, 1.0)
        mask[k] = True
    return Trajectory(
        task=traj.task,
        seed=traj.seed,
        observations=traj.observations,
        actions=actions,
        perturbed_mask=mask,
        success=traj.success,
    )


def replay_trajectory(traj: Trajectory) -> Trajectory:
    """Execute the recorded actions closed-loop so later observations and success reflect them."""
    replayed = execute(traj.task, traj.seed, traj.actions)
    return Trajectory(
        task=replayed.task,
        seed=replayed.seed,
        observations=replayed.observations,
        actions=replayed.actions,
        perturbed_mask=traj.perturbed_mask[: replayed.length].copy(),
        success=replayed.success,
    )


def perturb_dataset(
    trajectories: Sequence[Trajectory],
    *,
    frac: float,
    eta: float,
    sigma_sq: float,
    flip_prob: float,
    seed: int,
    replay: bool = True,
    sigma_is_std: bool = False,
) -> List[Trajectory]:
    """Perturb every trajectory with its own stream ``default_rng([seed, index])``."""
    out: List[Trajectory] = []
    for index, traj in enumerate(trajectories):
        rng = np.random.default_rng([seed, index])
        perturbed = perturb_trajectory(
            traj, frac, eta, sigma_sq, flip_prob, rng, sigma_is_std=sigma_is_std
        )
        out.append(replay_trajectory(perturbed) if replay else perturbed)
    if replay and out:
        LOGGER.info(
            "closed-loop replay: %d/%d perturbed trajectories still succeed",
            sum(traj.success for traj in out),
            len(out),
        )
    return out


def mix(clean: Sequence[Trajectory], perturbed: Sequence[Trajectory]) -> MixedDataset:
    """Flatten trajectories into transitions labelled with ground truth and provenance."""
    parts = [(traj, Source.CLEAN) for traj in clean] + [(traj, Source.PERTURBED) for traj in perturbed]
    if not parts:
        empty = np.zeros((0, 0))
        return MixedDataset(empty, empty, np.zeros(0, dtype=bool), np.zeros(0, dtype=np.int8))
    observations = np.concatenate([traj.observations[:-1] for traj, _ in parts])
    actions = np.concatenate([traj.actions for traj, _ in parts])
    truth = np.concatenate([traj.perturbed_mask for traj, _ in parts])
    source = np.concatenate(
        [np.full(traj.length, int(label), dtype=np.int8) for traj, label in parts]
    )
    return MixedDataset(observations, actions, truth.astype(bool), source)


def sample_batch(dataset: MixedDataset, batch_size: int, rng) -> Batch:
    """Uniform sampling with replacement."""
    if len(dataset) == 0:
        raise StateError("cannot sample from an empty dataset")
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    index = np.asarray(rng.integers(0, len(dataset), size=batch_size))
    return Batch(
        observations=dataset.observations[index],
        actions=dataset.actions[index],
        perturbed=dataset.perturbed[index],
        source=dataset.source[index],
    )


def take(trajectories: Sequence[Trajectory], n: Optional[int]) -> List[Trajectory]:
    if n is None:
        return list(trajectories)
    if n > len(trajectories):
        raise ConfigurationError(f"asked for {n} trajectories but the file holds {len(trajectories)}")
    return list(trajectories[:n])


def _to_record(traj: Trajectory) -> dict:
    return {
        "v": FORMAT_VERSION,
        "task": traj.task,
        "seed": traj.seed,
        "observations": traj.observations.tolist(),
        "actions": traj.actions.tolist(),
        "perturbed_mask": [bool(flag) for flag in traj.perturbed_mask],
        "success": bool(traj.success),
    }


def _rows(name: str, rows: List[List[float]], width: int) -> np.ndarray:
    for index, row in enumerate(rows):
        if len(row) != width:
            raise ValidationError(f"{name}[{index}] has {len(row)} values, expected {width}")
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), width)


def _from_record(record: TrajectoryRecord) -> Trajectory:
    try:
        spec = get_task(record.task).spec
    except DSPError as exc:
        raise ValidationError(str(exc)) from None
    return Trajectory(
        task=record.task,
        seed=record.seed,
        observations=_rows("observations", record.observations, spec.obs_dim),
        actions=_rows("actions", record.actions, spec.action_dim),
        perturbed_mask=np.asarray(record.perturbed_mask, dtype=bool).reshape(-1),
        success=record.success,
    )


def save_dataset(trajectories: Iterable[Trajectory], path: Path | str) -> Path:
    """One JSON object per line; floats written as shortest round-trip decimals."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(_to_record(traj), separators=(",", ":")) for traj in trajectories]
    path.write_text("".join(line + "\n" for line in lines))
    return path


def load_dataset(path: Path | str) -> List[Trajectory]:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"dataset file not found: {path}")
    trajectories: List[Trajectory] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: malformed record ({exc.msg})", line=lineno) from None
        try:
            record = TrajectoryRecord.model_validate(payload)
            trajectories.append(_from_record(record))
        except PydanticValidationError as exc:
            raise ValidationError(f"{path} line {lineno}: {exc.errors()[0]['msg']}") from None
        except ValueError as exc:
            raise ValidationError(f"{path} line {lineno}: ragged or mis-sized arrays ({exc})") from None
        except ValidationError as exc:
            raise ValidationError(f"{path} line {lineno}: {exc}") from None
    return trajectories


__all__ = [
    "Source",
    "MixedDataset",
    "Batch",
    "TrajectoryRecord",
    "collect_demos",
    "perturb_trajectory",
    "replay_trajectory",
    "perturb_dataset",
    "mix",
    "sample_batch",
    "take",
    "save_dataset",
    "load_dataset",
]
