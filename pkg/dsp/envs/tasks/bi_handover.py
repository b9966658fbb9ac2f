"""Two arms: the left one picks the object up and passes it to the right one, which delivers it."""
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
from .block_transfer import pick_and_place

HANDOVER_POINT = np.array([0.0, 0.0, 0.2])
PICK_LOW, PICK_HIGH = (-0.7, -0.3, -0.3), (-0.3, 0.3, 0.0)
PLACE_LOW, PLACE_HIGH = (0.3, -0.3, -0.3), (0.7, 0.3, 0.0)


class BiHandoverTask(Task):
    slug = TaskName.BI_HANDOVER
    arms = 2

    def home(self) -> np.ndarray:
        return np.array([[-0.5, 0.0, 0.2], [0.5, 0.0, 0.2]])

    def sample_layout(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        obj = uniform_in(rng, PICK_LOW, PICK_HIGH)
        goal = uniform_in(rng, PLACE_LOW, PLACE_HIGH)
        return obj, goal

    def is_success(self, state: EnvState) -> bool:
        return (
            state.handed_over
            and state.held_by is None
            and distance(state.obj_pos, state.goal_pos) <= self.spec.success_tol
        )

    def expert(self, state: EnvState) -> np.ndarray:
        if self.is_success(state):
            return self.idle(state)
        parked = arm_command(np.zeros(3), GRIPPER_OPEN)
        if state.held_by == 1 or (state.held_by is None and state.handed_over):
            return np.concatenate([parked, pick_and_place(state, 1, state.goal_pos)])

        receiver = state.ee_pos[1]
        wait = arm_command(toward(receiver, HANDOVER_POINT), GRIPPER_OPEN)
        if state.held_by is None:
            return np.concatenate([pick_and_place(state, 0, HANDOVER_POINT), wait])

        giver = state.ee_pos[0]
        both_at_rendezvous = (
            distance(giver, HANDOVER_POINT) <= AT_TOL
            and distance(receiver, HANDOVER_POINT) <= AT_TOL
            and state.gripper[1] > 0
        )
        if both_at_rendezvous:
            # released before grasps within a step, so the pass happens at once
            return np.concatenate(
                [arm_command(np.zeros(3), GRIPPER_OPEN), arm_command(np.zeros(3), GRIPPER_CLOSED)]
            )
        return np.concatenate([arm_command(toward(giver, HANDOVER_POINT), GRIPPER_CLOSED), wait])


__all__ = ["BiHandoverTask", "HANDOVER_POINT"]
