"""Value types and the task base class for the kinematic manipulation environments."""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np

STEP_SIZE = 0.05
GRASP_TOL = 0.03
SUCCESS_TOL = 0.025
MAX_STEPS = 50
WORKSPACE = 1.0
GRIPPER_OPEN = 1.0
GRIPPER_CLOSED = -1.0
# the scripted experts treat a target as reached below this distance
AT_TOL = 1e-6


class TaskName(str, Enum):
    POINT_REACH = "point_reach"
    BLOCK_TRANSFER = "block_transfer"
    BI_HANDOVER = "bi_handover"


@dataclass(frozen=True)
class TaskSpec:
    name: TaskName
    arms: int
    max_steps: int = MAX_STEPS
    success_tol: float = SUCCESS_TOL

    @property
    def action_dim(self) -> int:
        return 4 * self.arms

    @property
    def obs_dim(self) -> int:
        return 4 * self.arms + 9


@dataclass(frozen=True, eq=False)
class EnvState:
    task: TaskName
    ee_pos: np.ndarray
    gripper: np.ndarray
    obj_pos: np.ndarray
    goal_pos: np.ndarray
    held_by: Optional[int] = None
    step_count: int = 0
    last_holder: Optional[int] = None
    handed_over: bool = False

    @property
    def arms(self) -> int:
        return int(self.ee_pos.shape[0])

    def observation(self) -> np.ndarray:
        return np.concatenate(
            [
                self.ee_pos.reshape(-1),
                self.gripper,
                self.obj_pos,
                self.goal_pos,
                self.obj_pos - self.goal_pos,
            ]
        )

    def evolve(self, **changes) -> "EnvState":
        return replace(self, **changes)

    def same_as(self, other: "EnvState") -> bool:
        return (
            self.task == other.task
            and np.array_equal(self.ee_pos, other.ee_pos)
            and np.array_equal(self.gripper, other.gripper)
            and np.array_equal(self.obj_pos, other.obj_pos)
            and np.array_equal(self.goal_pos, other.goal_pos)
            and self.held_by == other.held_by
            and self.step_count == other.step_count
            and self.last_holder == other.last_holder
            and self.handed_over == other.handed_over
        )


def distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def toward(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Proportional motion command that lands exactly on ``target`` once within one step."""
    return np.clip((np.asarray(target) - np.asarray(position)) / STEP_SIZE, -1.0, 1.0)


def arm_command(motion: np.ndarray, grip: float) -> np.ndarray:
    return np.concatenate([motion, [grip]])


class Task:
    """One task family: how to lay out a reset, when it is solved, and its scripted expert."""

    slug: TaskName
    arms: int = 1

    def __init__(self) -> None:
        self.spec = TaskSpec(name=self.slug, arms=self.arms)

    def home(self) -> np.ndarray:
        raise NotImplementedError

    def sample_layout(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(obj_pos, goal_pos)`` for a fresh episode."""
        raise NotImplementedError

    def is_success(self, state: EnvState) -> bool:
        raise NotImplementedError

    def expert(self, state: EnvState) -> np.ndarray:
        raise NotImplementedError

    def idle(self, state: EnvState) -> np.ndarray:
        """No motion, grippers kept as they are."""
        return np.concatenate([arm_command(np.zeros(3), state.gripper[arm]) for arm in range(state.arms)])


def uniform_in(rng: np.random.Generator, low, high) -> np.ndarray:
    return rng.uniform(np.asarray(low, dtype=np.float64), np.asarray(high, dtype=np.float64))


__all__ = [
    "TaskName",
    "TaskSpec",
    "EnvState",
    "Task",
    "STEP_SIZE",
    "GRASP_TOL",
    "SUCCESS_TOL",
    "MAX_STEPS",
    "WORKSPACE",
    "GRIPPER_OPEN",
    "GRIPPER_CLOSED",
    "AT_TOL",
    "distance",
    "toward",
    "arm_command",
    "uniform_in",
]
