"""Reset/step dynamics and rollouts shared by every task family."""
from __future__ import annotations

import logging
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from ..errors import NumericError, ShapeError
from ..schemas import Trajectory
from .base import GRASP_TOL, GRIPPER_CLOSED, GRIPPER_OPEN, STEP_SIZE, WORKSPACE, EnvState, Task, TaskName, distance
from .tasks import get_task

LOGGER = logging.getLogger(__name__)

Controller = Callable[[EnvState, np.ndarray], np.ndarray]
StepResult = Tuple[EnvState, np.ndarray, bool, bool]


def _resolve(task: Task | TaskName | str) -> Task:
    return task if isinstance(task, Task) else get_task(task)


def reset(task: Task | TaskName | str, seed: int) -> Tuple[EnvState, np.ndarray]:
    task = _resolve(task)
    rng = np.random.default_rng(seed)
    obj, goal = task.sample_layout(rng)
    home = task.home()
    state = EnvState(
        task=task.slug,
        ee_pos=home,
        gripper=np.full(task.arms, GRIPPER_CLOSED),
        obj_pos=obj,
        goal_pos=goal,
    )
    return state, state.observation()


def step(task: Task | TaskName | str, state: EnvState, action: np.ndarray) -> StepResult:
    """Advance one control step. Releases are applied before grasps."""
    task = _resolve(task)
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (task.spec.action_dim,):
        raise ShapeError(
            f"{task.slug.value} takes actions of shape ({task.spec.action_dim},), got {action.shape}"
        )
    if not np.all(np.isfinite(action)):
        raise NumericError(f"non-finite action at step {state.step_count}")
    commands = np.clip(action, -1.0, 1.0).reshape(task.arms, 4)

    ee_pos = np.clip(state.ee_pos + STEP_SIZE * commands[:, :3], -WORKSPACE, WORKSPACE)
    obj_pos = state.obj_pos.copy()
    held_by = state.held_by
    if held_by is not None:
        obj_pos = ee_pos[held_by].copy()
    new_grip = np.where(commands[:, 3] > 0, GRIPPER_OPEN, GRIPPER_CLOSED)

    last_holder = state.last_holder
    if held_by is not None and new_grip[held_by] == GRIPPER_OPEN:
        last_holder, held_by = held_by, None

    handed_over = state.handed_over
    for arm in range(task.arms):
        if held_by is not None:
            break
        closing = state.gripper[arm] == GRIPPER_OPEN and new_grip[arm] == GRIPPER_CLOSED
        if closing and distance(ee_pos[arm], obj_pos) <= GRASP_TOL:
            held_by = arm
            obj_pos = ee_pos[arm].copy()
            if arm == 1 and last_holder == 0:
                handed_over = True

    next_state = EnvState(
        task=task.slug,
        ee_pos=ee_pos,
        gripper=new_grip,
        obj_pos=obj_pos,
        goal_pos=state.goal_pos,
        held_by=held_by,
        step_count=state.step_count + 1,
        last_holder=last_holder,
        handed_over=handed_over,
    )
    success = task.is_success(next_state)
    done = success or next_state.step_count >= task.spec.max_steps
    return next_state, next_state.observation(), done, success


def expert_controller(task: Task | TaskName | str) -> Controller:
    task = _resolve(task)

    def control(state: EnvState, _obs: np.ndarray) -> np.ndarray:
        return task.expert(state)

    return control


def rollout(
    controller: Controller,
    task: Task | TaskName | str,
    seed: int,
    max_steps: Optional[int] = None,
) -> Trajectory:
    """Run ``controller`` from ``reset(task, seed)`` until done or ``max_steps``."""
    task = _resolve(task)
    limit = task.spec.max_steps if max_steps is None else min(int(max_steps), task.spec.max_steps)
    state, obs = reset(task, seed)
    observations, actions = [obs], []
    success = False
    done = False
    while not done and len(actions) < limit:
        action = np.asarray(controller(state, obs), dtype=np.float64)
        state, obs, done, success = step(task, state, action)
        actions.append(action)
        observations.append(obs)
    return _trajectory(task, seed, observations, actions, success)


def execute(task: Task | TaskName | str, seed: int, actions: Sequence[np.ndarray]) -> Trajectory:
    """Replay a fixed action sequence from ``reset(task, seed)``; stops early once the episode ends."""
    task = _resolve(task)
    state, obs = reset(task, seed)
    observations, executed = [obs], []
    success = False
    for action in actions:
        action = np.asarray(action, dtype=np.float64)
        state, obs, done, success = step(task, state, action)
        executed.append(action)
        observations.append(obs)
        if done:
            break
    return _trajectory(task, seed, observations, executed, success)


def _trajectory(task: Task, seed: int, observations, actions, success: bool) -> Trajectory:
    act_dim = task.spec.action_dim
    return Trajectory(
        task=task.slug.value,
        seed=int(seed),
        observations=np.stack(observations),
        actions=np.stack(actions) if actions else np.zeros((0, act_dim)),
        perturbed_mask=np.zeros(len(actions), dtype=bool),
        success=bool(success),
    )


__all__ = ["Controller", "reset", "step", "rollout", "execute", "expert_controller"]
