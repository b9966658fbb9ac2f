"""Single arm picks a block up and sets it down on a goal spot."""
from __future__ import annotations

from typing import Tuple

import numpy as np

from ..base import (
    AT_TOL,
    GRIPPER_CLOSED,
    GRIPPER_OPEN,
    EnvState,
    Task,
    TaskName,
    arm_command,
    distance,
    toward,
    uniform_in,
)

TABLE_LOW = (-0.4, -0.4, -0.3)
TABLE_HIGH = (0.4, 0.4, 0.0)
MIN_SEPARATION = 0.2


def pick_and_place(state: EnvState, arm: int, target: np.ndarray) -> np.ndarray:
    """Command for ``arm`` to fetch the free or self-held object and drop it at ``target``."""
    ee = state.ee_pos[arm]
    if state.held_by == arm:
        if distance(ee, target) <= AT_TOL:
            return arm_command(np.zeros(3), GRIPPER_OPEN)
        return arm_command(toward(ee, target), GRIPPER_CLOSED)
    if distance(ee, state.obj_pos) <= AT_TOL:
        # closing only grasps on an open -> closed transition
        grip = GRIPPER_CLOSED if state.gripper[arm] > 0 else GRIPPER_OPEN
        return arm_command(np.zeros(3), grip)
    return arm_command(toward(ee, state.obj_pos), GRIPPER_OPEN)


class BlockTransferTask(Task):
    slug = TaskName.BLOCK_TRANSFER
    arms = 1

    def home(self) -> np.ndarray:
        return np.array([[0.0, 0.0, 0.3]])

    def sample_layout(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        while True:
            obj = uniform_in(rng, TABLE_LOW, TABLE_HIGH)
            goal = uniform_in(rng, TABLE_LOW, TABLE_HIGH)
            if distance(obj, goal) >= MIN_SEPARATION:
                return obj, goal

    def is_success(self, state: EnvState) -> bool:
        return state.held_by is None and distance(state.obj_pos, state.goal_pos) <= self.spec.success_tol

    def expert(self, state: EnvState) -> np.ndarray:
        if self.is_success(state):
            return self.idle(state)
        return pick_and_place(state, 0, state.goal_pos)


__all__ = ["BlockTransferTask", "pick_and_place"]
