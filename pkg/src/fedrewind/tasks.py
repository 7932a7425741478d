"""Class-incremental task streams with per-node timing offsets.

Classes are split into equal contiguous groups; each node walks the
groups in its own seeded order, switching every rounds_per_task rounds,
with a per-node start offset so nodes shift distribution at different
times. Training sees only the current task's classes; evaluation always
uses the full test split so curves stay comparable across rounds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Shard
from .seeding import generator, mix


@dataclass(frozen=True)
class TaskSchedule:
    """One node's ordered class groups and switching cadence."""

    node_id: int
    tasks: tuple[tuple[int, ...], ...]
    rounds_per_task: int
    offset_rounds: int

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("schedule needs at least one task")
        if self.rounds_per_task < 1:
            raise ValueError("rounds_per_task must be at least 1")
        if self.offset_rounds < 0:
            raise ValueError("offset_rounds must be non-negative")
        flat = [c for group in self.tasks for c in group]
        if len(flat) != len(set(flat)):
            raise ValueError("task class groups must be disjoint")

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class ActiveView:
    """Train indices visible to a node at one round."""

    node_id: int
    round: int
    indices: np.ndarray

    def __post_init__(self):
        indices = np.array(self.indices, dtype=np.int64).ravel()
        indices.setflags(write=False)
        object.__setattr__(self, "indices", indices)


def make_schedules(
    num_classes: int,
    num_tasks: int,
    num_nodes: int,
    rounds_per_task: int,
    max_offset: int,
    seed: int,
) -> list[TaskSchedule]:
    """Per-node schedules over equal contiguous class groups.

    Each node permutes the groups with its own stream and draws a start
    offset uniformly from [0, max_offset].
    """
    if num_tasks < 1 or num_nodes < 1:
        raise ValueError("num_tasks and num_nodes must be positive")
    if num_classes % num_tasks != 0:
        raise ValueError(
            f"num_classes {num_classes} not divisible by num_tasks {num_tasks}"
        )
    if max_offset < 0:
        raise ValueError("max_offset must be non-negative")
    size = num_classes // num_tasks
    groups = [
        tuple(range(g * size, (g + 1) * size)) for g in range(num_tasks)
    ]
    schedules = []
    for node in range(num_nodes):
        rng = generator(mix(seed, node))
        order = rng.permutation(num_tasks)
        offset = int(rng.integers(max_offset + 1))
        schedules.append(
            TaskSchedule(
                node_id=node,
                tasks=tuple(groups[int(g)] for g in order),
                rounds_per_task=rounds_per_task,
                offset_rounds=offset,
            )
        )
    return schedules


def task_index(schedule: TaskSchedule, round: int) -> int:
    """Which task is active at a (0-based) round; clamped to the last."""
    if round < 0:
        raise ValueError("round must be non-negative")
    if round < schedule.offset_rounds:
        return 0
    idx = (round - schedule.offset_rounds) // schedule.rounds_per_task
    return min(idx, schedule.num_tasks - 1)


def active_view(
    schedule: TaskSchedule, shard: Shard, data: Dataset, round: int
) -> ActiveView:
    """Train indices of the current task's classes only.

    May be empty when the shard holds no samples of those classes; the
    round engine then skips the affected phase.
    """
    classes = schedule.tasks[task_index(schedule, round)]
    mask = np.isin(data.labels[shard.train], classes)
    return ActiveView(
        node_id=schedule.node_id, round=round, indices=shard.train[mask]
    )
