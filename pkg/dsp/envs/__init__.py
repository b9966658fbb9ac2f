"""Deterministic kinematic manipulation tasks with scripted experts."""
from __future__ import annotations

from .base import EnvState, Task, TaskName, TaskSpec
from .sim import Controller, execute, expert_controller, reset, rollout, step
from .tasks import TASKS, get_task

__all__ = [
    "EnvState",
    "Task",
    "TaskName",
    "TaskSpec",
    "Controller",
    "TASKS",
    "get_task",
    "reset",
    "step",
    "rollout",
    "execute",
    "expert_controller",
]
