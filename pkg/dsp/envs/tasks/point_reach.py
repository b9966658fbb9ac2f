"""Single arm drives its end-effector to a goal point."""
from __future__ import annotations

from typing import Tuple

import numpy as np

from ..base import GRIPPER_CLOSED, EnvState, Task, TaskName, arm_command, distance, toward, uniform_in

GOAL_BOX = 0.4
MIN_GOAL_DISTANCE = 0.1


class PointReachTask(Task):
    slug = TaskName.POINT_REACH
    arms = 1

    def home(self) -> np.ndarray:
        return np.zeros((1, 3))

    def sample_layout(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        start = self.home()[0]
        while True:
            goal = uniform_in(rng, [-GOAL_BOX] * 3, [GOAL_BOX] * 3)
            if distance(goal, start) >= MIN_GOAL_DISTANCE:
                break
        # distractor only; nothing interacts with it
        obj = uniform_in(rng, [-GOAL_BOX] * 3, [GOAL_BOX] * 3)
        return obj, goal

    def is_success(self, state: EnvState) -> bool:
        return distance(state.ee_pos[0], state.goal_pos) <= self.spec.success_tol

    def expert(self, state: EnvState) -> np.ndarray:
        if self.is_success(state):
            return self.idle(state)
        return arm_command(toward(state.ee_pos[0], state.goal_pos), GRIPPER_CLOSED)


__all__ = ["PointReachTask"]
