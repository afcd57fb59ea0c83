"""Utility-based allocation of target-retrieval tasks to robots.

Each (robot, task) pair gets a rearrangement set from obstacle selection.
Tasks are assigned greedily, one at a time, to the robot with the highest
utility ``1 / (1 + corrected_count)``, where the corrected count discounts
objects already claimed by earlier assignments.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .motion import GRASP_STEP
from .selection import NoFeasibleGrasp, select_obstacles
from .world import InvariantViolation, Status, WorkspaceModel

UNION = "union"
PAIRWISE = "pairwise_eq1"
MODES = (UNION, PAIRWISE)
BRUTE_FORCE_LIMIT = 10**6


class _Infeasible(Enum):
    INFEASIBLE = "infeasible"

    def __repr__(self) -> str:
        return "INFEASIBLE"


INFEASIBLE = _Infeasible.INFEASIBLE

SetSystem = Mapping[tuple[str, str], "frozenset[str] | None"]
Schedule = Mapping[str, Sequence[str]]


class AllocationError(Exception):
    pass


class TaskInfeasible(AllocationError):
    def __init__(self, task: str):
        super().__init__(f"no robot can perform task {task}")
        self.task = task


class InstanceTooLarge(AllocationError):
    pass


@dataclass(frozen=True)
class RearrangementSet:
    robot: str
    task: str
    objects: frozenset[str]


def rearrangement_sets(world: WorkspaceModel, step: float = GRASP_STEP) -> dict[tuple[str, str], frozenset[str] | None]:
    """Selection result for every robot and on-table target; ``None`` marks
    a pair where the robot cannot reach the target at all."""
    sets: dict[tuple[str, str], frozenset[str] | None] = {}
    for t in world.targets:
        if t.status is not Status.ON_TABLE:
            continue
        for r in world.robots:
            try:
                sets[(r.id, t.id)] = select_obstacles(world, r, t.id, step)
            except NoFeasibleGrasp:
                sets[(r.id, t.id)] = None
    return sets


def _precedes(schedule: Schedule, robot: str, task_k: str, task_j: str) -> bool:
    sched = list(schedule.get(robot, ()))
    if task_k == task_j or task_k not in sched:
        return False
    if task_j in sched:
        return sched.index(task_k) < sched.index(task_j)
    return True


def intra_overlap(sets: SetSystem, schedule: Schedule, robot: str, task_j: str, task_k: str) -> frozenset[str]:
    """Objects shared by the robot's set for ``task_j`` and an earlier task
    ``task_k`` in its own schedule; empty if ``task_k`` does not precede."""
    if not _precedes(schedule, robot, task_k, task_j):
        return frozenset()
    a, b = sets.get((robot, task_j)), sets.get((robot, task_k))
    if a is None or b is None:
        return frozenset()
    return frozenset(a & b)


def inter_overlap(
    sets: SetSystem, schedule: Schedule, robot_i: str, task_j: str, robot_k: str, task_l: str
) -> frozenset[str]:
    """Objects shared with another robot's previously allotted task."""
    if robot_i == robot_k:
        raise ValueError("same robot: use intra_overlap")
    if task_l not in schedule.get(robot_k, ()) or task_l == task_j:
        return frozenset()
    a, b = sets.get((robot_i, task_j)), sets.get((robot_k, task_l))
    if a is None or b is None:
        return frozenset()
    return frozenset(a & b)


def corrected_count(sets: SetSystem, schedule: Schedule, robot: str, task: str, mode: str = UNION):
    """Rearrangement count after discounting already-claimed objects.

    ``union`` counts objects not in any previously allotted set.
    ``pairwise_eq1`` subtracts every intra- and inter-robot pairwise overlap
    and clamps at zero, since an object shared with several earlier tasks is
    subtracted once per task.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if (robot, task) not in sets:
        raise KeyError(f"no rearrangement set for {(robot, task)}")
    own = sets[(robot, task)]
    if own is None:
        return INFEASIBLE
    if mode == UNION:
        claimed: set[str] = set()
        for r, tasks in schedule.items():
            for t in tasks:
                if t != task and sets.get((r, t)) is not None:
                    claimed |= sets[(r, t)]
        return len(own - claimed)
    count = len(own)
    for t_k in schedule.get(robot, ()):
        count -= len(intra_overlap(sets, schedule, robot, task, t_k))
    for r_k, tasks in schedule.items():
        if r_k == robot:
            continue
        for t_l in tasks:
            count -= len(inter_overlap(sets, schedule, robot, task, r_k, t_l))
    return max(count, 0)


def utility(corrected) -> float:
    if corrected is INFEASIBLE or corrected is None:
        return 0.0
    if corrected < 0:
        raise ValueError("corrected count must be non-negative")
    return 1.0 / (1.0 + corrected)


@dataclass(frozen=True)
class UtilityEntry:
    raw_count: int | None
    corrected_count: object
    utility: float


@dataclass
class UtilityTable:
    mode: str
    entries: dict[tuple[str, str], UtilityEntry] = field(default_factory=dict)

    def matrix(self, robots: Sequence[str], tasks: Sequence[str]) -> np.ndarray:
        return np.array([[self.entries[(r, t)].utility for t in tasks] for r in robots])


@dataclass(frozen=True)
class AllocationStep:
    task: str
    utilities: dict[str, float]
    corrected: dict[str, object]
    chosen: str
    tie_break: str  # "unique", "empty_schedule" or "random"


@dataclass
class Allocation:
    robots: tuple[str, ...]
    tasks: tuple[str, ...]
    schedule: dict[str, list[str]]
    x: np.ndarray
    total_utility: float
    table: UtilityTable | None = None
    steps: list[AllocationStep] = field(default_factory=list)

    def robot_for(self, task: str) -> str:
        j = self.tasks.index(task)
        return self.robots[int(np.argmax(self.x[:, j]))]


def greedy_allocate(
    sets: SetSystem,
    robots: Sequence[str],
    order: Sequence[str],
    *,
    mode: str = UNION,
    rng: np.random.Generator | None = None,
) -> Allocation:
    """Assign tasks in ``order``, each to the robot of maximum utility against
    the partial allocation so far.

    Ties go to a robot with an empty schedule; remaining ties are broken
    uniformly at random with ``rng``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    robots = tuple(robots)
    tasks = tuple(order)
    schedule: dict[str, list[str]] = {r: [] for r in robots}
    table = UtilityTable(mode)
    x = np.zeros((len(robots), len(tasks)), dtype=int)
    total = 0.0
    steps = []
    for task in tasks:
        corrected = {r: corrected_count(sets, schedule, r, task, mode) for r in robots}
        util = {r: utility(corrected[r]) for r in robots}
        for r in robots:
            raw = sets[(r, task)]
            table.entries[(r, task)] = UtilityEntry(None if raw is None else len(raw), corrected[r], util[r])
        best = max(util.values())
        if best <= 0.0:
            raise TaskInfeasible(task)
        tied = [r for r in robots if util[r] == best]
        if len(tied) == 1:
            chosen, how = tied[0], "unique"
        else:
            empty = [r for r in tied if not schedule[r]]
            if len(empty) == 1:
                chosen, how = empty[0], "empty_schedule"
            else:
                pool = empty or tied
                chosen, how = pool[int(rng.integers(len(pool)))], "random"
        schedule[chosen].append(task)
        x[robots.index(chosen), tasks.index(task)] = 1
        total += best
        steps.append(AllocationStep(task, util, corrected, chosen, how))
    return Allocation(robots, tasks, schedule, x, total, table, steps)


def allocate(
    world: WorkspaceModel,
    step: float = GRASP_STEP,
    seed: int = 0,
    *,
    mode: str = UNION,
    order: str = "random",
) -> Allocation:
    """Offline greedy allocation of all on-table targets.

    ``order="random"`` visits targets in a seeded random order;
    ``order="lexical"`` visits them by id.
    """
    robots = tuple(r.id for r in world.robots)
    targets = [t.id for t in world.targets if t.status is Status.ON_TABLE]
    if len(targets) < len(robots):
        raise InvariantViolation("T ≥ R")
    rng = np.random.default_rng(seed)
    if order == "random":
        targets = [targets[i] for i in rng.permutation(len(targets))]
    elif order == "lexical":
        targets = sorted(targets)
    else:
        raise ValueError(f"unknown order {order!r}")
    sets = rearrangement_sets(world, step)
    return greedy_allocate(sets, robots, targets, mode=mode, rng=rng)


def brute_force_allocate(utilities, n_tasks: int | None = None, n_robots: int | None = None, *, robots=None, tasks=None) -> Allocation:
    """Exhaustive maximizer of the summed utility over all task-to-robot maps.

    ``utilities`` is an (R, T) array-like, or a :class:`UtilityTable` together
    with ``robots`` and ``tasks``. Utilities are taken as fixed, so the
    coupling through the corrected counts is ignored.
    """
    if isinstance(utilities, UtilityTable):
        if robots is None or tasks is None:
            raise ValueError("robots and tasks are required with a UtilityTable")
        u = utilities.matrix(robots, tasks)
    else:
        u = np.asarray(utilities, dtype=float)
    R, T = u.shape
    if (n_robots is not None and n_robots != R) or (n_tasks is not None and n_tasks != T):
        raise ValueError("utility matrix shape does not match R, T")
    if R**T > BRUTE_FORCE_LIMIT:
        raise InstanceTooLarge(f"{R}^{T} assignments exceed {BRUTE_FORCE_LIMIT}")
    robots = tuple(robots) if robots is not None else tuple(f"r{i + 1}" for i in range(R))
    tasks = tuple(tasks) if tasks is not None else tuple(f"t{j + 1}" for j in range(T))
    best, best_assign = -math.inf, None
    cols = np.arange(T)
    for assign in itertools.product(range(R), repeat=T):
        value = float(u[list(assign), cols].sum())
        if value > best:
            best, best_assign = value, assign
    x = np.zeros((R, T), dtype=int)
    x[list(best_assign), cols] = 1
    schedule = {r: [tasks[j] for j in range(T) if best_assign[j] == i] for i, r in enumerate(robots)}
    return Allocation(robots, tasks, schedule, x, best)
