"""Task families available to demonstrations, training and evaluation."""
from __future__ import annotations

from typing import Dict, Type

from ...errors import ConfigurationError
from ..base import Task, TaskName

from .bi_handover import BiHandoverTask
from .block_transfer import BlockTransferTask
from .point_reach import PointReachTask

TASKS: Dict[str, Type[Task]] = {
    PointReachTask.slug.value: PointReachTask,
    BlockTransferTask.slug.value: BlockTransferTask,
    BiHandoverTask.slug.value: BiHandoverTask,
}


def get_task(name: str | TaskName) -> Task:
    key = name.value if isinstance(name, TaskName) else str(name)
    try:
        return TASKS[key]()
    except KeyError:
        raise ConfigurationError(
            f"unknown task {key!r}; choose from {', '.join(sorted(TASKS))}"
        ) from None


__all__ = ["TASKS", "get_task", "PointReachTask", "BlockTransferTask", "BiHandoverTask"]
