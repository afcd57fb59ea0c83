"""Multi-robot task-and-motion loop.

Allocation runs once, offline. Each robot then works through its schedule
with one graph network per task. Abstract actions picked by the network are
grounded into motion queries against the knowledge base, planned, and
executed kinematically. Robots take turns at sub-task granularity (one
pick-and-place or one target grasp per turn) and park at home between turns,
so at most one robot moves at any time.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .allocation import UNION, Allocation, allocate
from .geometry import wrap_angle
from .motion import (
    DEFAULT_ITERATIONS,
    GRASP_STEP,
    MotionPlan,
    MotionQuery,
    Payload,
    approach_axis,
    grasp_candidates,
    grasp_pose,
    next_free_cell,
    payload_for,
    plan_path,
    query_bounds,
    transfer_goal,
)
from .taskgraph import (
    ARC_DIRECT,
    DEFAULT_DEPTH_CAP,
    DEFAULT_RETRIES,
    DEFAULT_RETRY_BUDGET,
    Action,
    DepthBudgetExceeded,
    Expand,
    Failed,
    GraphNetwork,
    HyperArc,
    NextActions,
    Solved,
    acknowledge,
    expand,
    network_step,
    new_network,
    removable_obstacles,
)
from .world import Configuration, Kind, Status, WorkspaceModel


class GroundingError(Exception):
    pass


@dataclass
class ExecutorConfig:
    failure_probability: float = 0.0
    retry_budget: int = DEFAULT_RETRY_BUDGET
    depth_cap: int = DEFAULT_DEPTH_CAP
    coordination: str = "turn_based"
    seeds: dict[str, int] = field(default_factory=lambda: {"allocation": 0, "motion": 0, "failure": 0})
    feasibility_retries: int = DEFAULT_RETRIES
    grasp_step: float = GRASP_STEP
    max_iterations: int = DEFAULT_ITERATIONS
    allocation_mode: str = UNION
    allocation_order: str = "random"
    nominal_speed: float = 0.1  # m/s, only used to give executions a duration

    def __post_init__(self):
        if not 0.0 <= self.failure_probability < 1.0:
            raise ValueError("failure_probability must lie in [0, 1)")
        if self.coordination != "turn_based":
            raise ValueError("only turn_based coordination is supported")
        if self.retry_budget < 0 or self.depth_cap < 1:
            raise ValueError("budgets must be positive")
        self.seeds = {"allocation": 0, "motion": 0, "failure": 0, **self.seeds}


@dataclass
class RobotState:
    config: Configuration
    carried: str | None = None


class KnowledgeBase:
    """Single mutable view of the workspace with an append-only event log."""

    def __init__(self, world: WorkspaceModel):
        self.initial = world
        self.world = world
        self.robot_states = {r.id: RobotState(r.home) for r in world.robots}
        self.log: list[dict] = []
        self.clock = 0.0

    def record(self, **event) -> dict:
        event["seq"] = len(self.log)
        event.setdefault("time", self.clock)
        self.log.append(event)
        return event

    def set_object(self, robot: str, action: str, object_id: str, status: Status, center=None) -> None:
        state = self.robot_states[robot]
        if status is Status.GRASPED:
            if state.carried is not None:
                raise RuntimeError(f"{robot} already holds {state.carried}")
            state.carried = object_id
        elif state.carried == object_id:
            state.carried = None
        self.world = self.world.moved(object_id, status, center)
        o = self.world.object(object_id)
        self.record(
            kind="object", robot=robot, action=action, object=object_id, status=status.value,
            x=o.center[0], y=o.center[1], verdict="ok",
        )

    def parked_discs(self, robot: str) -> np.ndarray:
        """End-effector discs of every other robot, as static obstacles."""
        rows = [
            (s.config.x, s.config.y, self.world.robot(rid).ee_radius)
            for rid, s in self.robot_states.items()
            if rid != robot
        ]
        return np.array(rows, dtype=float).reshape(-1, 3)


def ground(
    action: Action,
    kb: KnowledgeBase,
    robot: str,
    *,
    start: Configuration | None = None,
    world: WorkspaceModel | None = None,
    seed: int = 0,
    step: float = GRASP_STEP,
    max_iterations: int = DEFAULT_ITERATIONS,
) -> MotionQuery:
    """Turn an abstract action into a motion query.

    ``grasp(o)`` targets the set of reachable free grasp poses of ``o``;
    ``approach(t, offset)`` the single pose at that offset; ``place(o, _)``
    carries ``o`` from the grasp pose ``start`` to the next free safe cell;
    ``return(_)`` goes back to the robot's home.
    """
    world = kb.world if world is None else world
    model = world.robot(robot)
    start = kb.robot_states[robot].config if start is None else start
    parked = kb.parked_discs(robot)
    try:
        obj = world.object(action.obj) if action.kind != "return" else None
    except KeyError:
        raise GroundingError(f"missing object {action.obj}") from None

    def obstacles(ignore=()):
        return np.vstack([world.obstacle_array(ignore, placed=True), parked])

    if action.kind in ("grasp", "approach"):
        if obj.status is not Status.ON_TABLE:
            raise GroundingError(f"{obj.id} is not on the table")
        if action.kind == "grasp":
            placed = np.array(
                [(*o.center, o.radius) for o in world.objects if o.status is Status.REMOVED_TO_SAFE]
            ).reshape(-1, 3)
            goals = tuple(pose for _, pose in grasp_candidates(world, model, obj, step, np.vstack([placed, parked])))
            if not goals:
                raise GroundingError(f"no reachable grasp pose for {obj.id}")
        else:
            goals = (grasp_pose(obj, approach_axis(model, obj), action.offset, model.ee_radius),)
        return MotionQuery(
            start, goals, model.ee_radius, obstacles(),
            query_bounds(world, start.xy, *(g.xy for g in goals)),
            max_iterations=max_iterations, seed=seed,
        )
    if action.kind == "place":
        cell = next_free_cell(world, robot)
        if cell is None:
            raise GroundingError("no free safe cell")
        _, destination = cell
        payload = payload_for(obj, model)
        goal = transfer_goal(start, payload, destination)
        return MotionQuery(
            start, (goal,), model.ee_radius, obstacles({obj.id}),
            query_bounds(world, start.xy, goal.xy, destination),
            max_iterations=max_iterations, seed=seed, payload=payload,
        )
    if action.kind == "return":
        home = model.home
        goal = Configuration(home.x, home.y, start.theta)
        return MotionQuery(
            start, (goal,), model.ee_radius, obstacles(),
            query_bounds(world, start.xy, goal.xy),
            max_iterations=max_iterations, seed=seed,
        )
    raise GroundingError(f"cannot ground action {action}")


@dataclass
class RobotMetrics:
    robot: str
    depth: int = 0
    tp_time: float = 0.0
    mp_time: float = 0.0
    mp_attempts: int = 0
    executions: int = 0
    rearranged: int = 0
    nodes_visited: int = 0
    execution_time: float = 0.0
    tasks: list[str] = field(default_factory=list)
    solved: list[str] = field(default_factory=list)
    failed: list[str] = field(default_factory=list)


@dataclass
class _Prepared:
    arc: str
    obj: str
    approach: MotionPlan
    approach_q: MotionQuery
    transfer: MotionPlan | None = None
    transfer_q: MotionQuery | None = None
    retreat: MotionPlan | None = None
    retreat_q: MotionQuery | None = None
    destination: tuple[float, float] | None = None


class RobotWorker:
    """Drives one robot's graph networks, one task at a time."""

    def __init__(self, robot: str, tasks, kb: KnowledgeBase, config: ExecutorConfig, index: int = 0):
        self.robot = robot
        self.queue = list(tasks)
        self.kb = kb
        self.config = config
        self.index = index
        self.metrics = RobotMetrics(robot, tasks=list(tasks))
        self.networks: dict[str, GraphNetwork] = {}
        self.net: GraphNetwork | None = None
        self._fail_rng = np.random.default_rng([config.seeds["failure"], index])
        self._plan_calls = 0
        self._prepared: _Prepared | None = None

    @property
    def busy(self) -> bool:
        return self.net is not None or bool(self.queue)

    # -- motion ------------------------------------------------------------
    def _seed(self) -> int:
        self._plan_calls += 1
        ss = np.random.SeedSequence([self.config.seeds["motion"], self.index, self._plan_calls])
        return int(ss.generate_state(1)[0])

    def _ground(self, action: Action, **kw) -> MotionQuery:
        return ground(
            action, self.kb, self.robot, seed=self._seed(), step=self.config.grasp_step,
            max_iterations=self.config.max_iterations, **kw,
        )

    def _plan(self, query: MotionQuery, label: str, obj: str) -> MotionPlan | None:
        t0 = time.perf_counter()
        plan = plan_path(query)
        dt = time.perf_counter() - t0
        self.metrics.mp_time += dt
        self.metrics.mp_attempts += 1
        self.kb.record(
            kind="plan", robot=self.robot, action=label, object=obj,
            verdict="found" if plan is not None else "infeasible",
            iterations=None if plan is None else plan.iterations, seed=query.seed,
        )
        return plan

    def _feasibility(self, arc: HyperArc, attempt: int) -> bool:
        self._prepared = None
        world = self.kb.world
        task = self.net.task
        if arc.id == ARC_DIRECT:
            blocking = removable_obstacles(world, self.robot, task, self.config.grasp_step, self.net.excluded)
            if blocking:
                self.kb.record(kind="gate", robot=self.robot, object=task, verdict="blocked", blocking=blocking)
                return False
            obj = task
        else:
            obj = arc.actions[0].obj
        try:
            aq = self._ground(Action("grasp", obj))
        except GroundingError as exc:
            self.kb.record(kind="gate", robot=self.robot, object=obj, verdict=str(exc))
            return False
        approach = self._plan(aq, "approach", obj)
        if approach is None:
            return False
        grasp_cfg = approach.waypoints[-1]
        if arc.id == ARC_DIRECT:
            after = world.moved(obj, Status.RETRIEVED)
            rq = self._ground(Action("return", self.robot), start=grasp_cfg, world=after)
            retreat = self._plan(rq, "return", obj)
            if retreat is None:
                return False
            self._prepared = _Prepared(arc.id, obj, approach, aq, retreat=retreat, retreat_q=rq)
            return True
        try:
            tq = self._ground(Action("place", obj, region=0), start=grasp_cfg)
        except GroundingError as exc:
            self.kb.record(kind="gate", robot=self.robot, object=obj, verdict=str(exc))
            return False
        transfer = self._plan(tq, "transfer", obj)
        if transfer is None:
            return False
        place_cfg = transfer.waypoints[-1]
        u = (math.cos(place_cfg.theta), math.sin(place_cfg.theta))
        off = tq.payload.offset
        destination = (place_cfg.x + off * u[0], place_cfg.y + off * u[1])
        after = world.moved(obj, Status.REMOVED_TO_SAFE, destination)
        rq = self._ground(Action("return", self.robot), start=place_cfg, world=after)
        retreat = self._plan(rq, "return", obj)
        if retreat is None:
            return False
        self._prepared = _Prepared(arc.id, obj, approach, aq, transfer, tq, retreat, rq, destination)
        return True

    def _execute(self, plan: MotionPlan, query: MotionQuery, label: str, obj: str) -> None:
        kb = self.kb
        t0 = kb.clock
        duration = plan.length / self.config.nominal_speed
        kb.clock += duration
        state = kb.robot_states[self.robot]
        state.config = plan.waypoints[-1]
        payload = query.payload
        kb.record(
            kind="motion", robot=self.robot, action=label, object=obj, verdict="executed",
            start=t0, end=kb.clock, time=t0,
            waypoints=[[w.x, w.y, w.theta] for w in plan.waypoints],
            moving_radius=query.moving_radius,
            payload=None if payload is None else [payload.offset, payload.radius],
            carried=state.carried, resolution=plan.resolution,
        )
        self.metrics.executions += 1
        self.metrics.execution_time += duration

    def _execute_arc(self) -> None:
        p = self._prepared
        kb = self.kb
        t0 = kb.clock
        self._execute(p.approach, p.approach_q, "approach", p.obj)
        if self._fail_rng.random() < self.config.failure_probability:
            # grasp slipped: the object keeps its pre-action pose
            kb.record(kind="failure", robot=self.robot, object=p.obj, verdict="grasp_failed")
            rq = self._ground(Action("return", self.robot))
            retreat = self._plan(rq, "return", p.obj) or p.approach.reversed()
            self._execute(retreat, rq, "return", p.obj)
            success = False
        elif p.arc == ARC_DIRECT:
            kb.set_object(self.robot, "grasp", p.obj, Status.GRASPED)
            kb.set_object(self.robot, "retrieve", p.obj, Status.RETRIEVED)
            self._execute(p.retreat, p.retreat_q, "return", p.obj)
            success = True
        else:
            kb.set_object(self.robot, "grasp", p.obj, Status.GRASPED)
            self._execute(p.transfer, p.transfer_q, "transfer", p.obj)
            kb.set_object(self.robot, "place", p.obj, Status.REMOVED_TO_SAFE, p.destination)
            self.metrics.rearranged += 1
            self._execute(p.retreat, p.retreat_q, "return", p.obj)
            success = True
        kb.record(kind="ack", robot=self.robot, object=p.obj, arc=p.arc, verdict="done" if success else "failed")
        acknowledge(self.net, success, kb.world)
        kb.record(kind="turn", robot=self.robot, start=t0, end=kb.clock, time=t0, verdict="ok")
        self._prepared = None

    # -- task planning -----------------------------------------------------
    def _start_next(self) -> None:
        task = self.queue.pop(0)
        t0 = time.perf_counter()
        self.net = new_network(
            self.robot, task, self.kb.world,
            depth_cap=self.config.depth_cap, retry_budget=self.config.retry_budget,
            feasibility_retries=self.config.feasibility_retries, step=self.config.grasp_step,
        )
        self.networks[task] = self.net
        self.metrics.tp_time += time.perf_counter() - t0
        self.kb.record(kind="task_start", robot=self.robot, object=task, verdict="started")

    def _finish(self, solved: bool, reason: str = "") -> None:
        net = self.net
        self.metrics.depth += net.depth
        self.metrics.nodes_visited += net.nodes_visited
        (self.metrics.solved if solved else self.metrics.failed).append(net.task)
        self.kb.record(
            kind="task_end", robot=self.robot, object=net.task, verdict="solved" if solved else "failed",
            reason=reason, depth=net.depth, nodes_visited=net.nodes_visited,
        )
        self.net = None

    def turn(self) -> bool:
        """Plan until one arc has been executed; False once the robot is idle."""
        while self.busy:
            if self.net is None:
                self._start_next()
            t0 = time.perf_counter()
            mp0 = self.metrics.mp_time
            outcome = network_step(self.net, self._feasibility, self.kb.world)
            self.metrics.tp_time += (time.perf_counter() - t0) - (self.metrics.mp_time - mp0)
            self.kb.record(kind="tp_step", robot=self.robot, object=self.net.task, verdict=type(outcome).__name__)
            if isinstance(outcome, NextActions):
                self._execute_arc()
                return True
            if isinstance(outcome, Expand):
                t0 = time.perf_counter()
                try:
                    expand(self.net, self.kb.world, failure_retry=outcome.failure_retry, obstacle=outcome.obstacle)
                except DepthBudgetExceeded as exc:
                    self._finish(False, str(exc))
                self.metrics.tp_time += time.perf_counter() - t0
            elif isinstance(outcome, Solved):
                self._finish(True)
            elif isinstance(outcome, Failed):
                self._finish(False, outcome.reason)
        return False


@dataclass
class TaskReport:
    robot: str
    task: str
    solved: bool
    network: GraphNetwork
    metrics: RobotMetrics


def run_task(robot: str, task: str, kb: KnowledgeBase, config: ExecutorConfig | None = None) -> TaskReport:
    """Run a single task to completion for one robot (no turn-taking)."""
    config = ExecutorConfig() if config is None else config
    index = [r.id for r in kb.world.robots].index(robot)
    worker = RobotWorker(robot, [task], kb, config, index)
    while worker.turn():
        pass
    return TaskReport(robot, task, task in worker.metrics.solved, worker.networks[task], worker.metrics)


@dataclass
class ExecutionReport:
    robots: dict[str, RobotMetrics]
    success: bool
    wall_time: float
    trace: list[dict]
    allocation: Allocation
    initial_world: WorkspaceModel
    final_world: WorkspaceModel
    networks: dict[tuple[str, str], GraphNetwork]

    def rows(self) -> list[dict]:
        return [
            {
                "robot": m.robot, "d": m.depth, "tp_time": m.tp_time, "mp_time": m.mp_time,
                "mp_attempts": m.mp_attempts, "executions": m.executions, "rearranged": m.rearranged,
                "nodes_visited": m.nodes_visited,
            }
            for m in self.robots.values()
        ]


def run(world: WorkspaceModel, config: ExecutorConfig | None = None) -> ExecutionReport:
    config = ExecutorConfig() if config is None else config
    t0 = time.perf_counter()
    allocation = allocate(
        world, config.grasp_step, config.seeds["allocation"], mode=config.allocation_mode, order=config.allocation_order
    )
    kb = KnowledgeBase(world)
    kb.record(kind="allocation", verdict="ok", schedule={r: list(t) for r, t in allocation.schedule.items()})
    workers = [RobotWorker(r.id, allocation.schedule[r.id], kb, config, i) for i, r in enumerate(world.robots)]
    while any(w.busy for w in workers):
        for w in workers:
            w.turn()
    success = all(not w.metrics.failed for w in workers)
    networks = {(w.robot, t): n for w in workers for t, n in w.networks.items()}
    return ExecutionReport(
        {w.robot: w.metrics for w in workers}, success, time.perf_counter() - t0, kb.log, allocation,
        world, kb.world, networks,
    )


# ---------------------------------------------------------------------------
# Offline trace checks
# ---------------------------------------------------------------------------

_ALLOWED = {
    ("on_table", "grasped"),
    ("grasped", "removed_to_safe"),
    ("grasped", "retrieved"),
    ("grasped", "on_table"),
}


def replay_world(initial: WorkspaceModel, trace: list[dict]) -> WorkspaceModel:
    world = initial
    for ev in trace:
        if ev.get("kind") == "object":
            world = world.moved(ev["object"], Status(ev["status"]), (ev["x"], ev["y"]))
    return world


def validate_trace(initial: WorkspaceModel, trace: list[dict], *, expect_success: bool = True) -> list[str]:
    """Re-check an execution trace from scratch.

    Covers object conservation and legal status changes, collision-freedom of
    every executed waypoint against the workspace at that instant, the goal
    condition, turn-interval disjointness, and acknowledgement discipline.
    """
    problems: list[str] = []
    world = initial
    ids = {o.id for o in initial.objects}
    configs = {r.id: r.home for r in initial.robots}
    awaiting_ack: dict[str, bool] = {}
    for ev in trace:
        kind = ev.get("kind")
        robot = ev.get("robot")
        if kind == "object":
            old = world.object(ev["object"]).status.value
            if (old, ev["status"]) not in _ALLOWED:
                problems.append(f"seq {ev['seq']}: illegal status change {old} -> {ev['status']}")
            world = world.moved(ev["object"], Status(ev["status"]), (ev["x"], ev["y"]))
            if {o.id for o in world.objects} != ids:
                problems.append(f"seq {ev['seq']}: object set changed")
        elif kind == "motion":
            awaiting_ack[robot] = True
            wps = [Configuration(*w) for w in ev["waypoints"]]
            if wps[0].xy != configs[robot].xy:
                problems.append(f"seq {ev['seq']}: {robot} motion does not start where it stands")
            ignore = {ev["carried"]} if ev.get("carried") else set()
            parked = [(c.x, c.y, world.robot(r).ee_radius) for r, c in configs.items() if r != robot]
            obstacles = np.vstack([world.obstacle_array(ignore, placed=True), np.array(parked).reshape(-1, 3)])
            payload = Payload(*ev["payload"]) if ev.get("payload") else None
            if payload is not None and not ev.get("carried"):
                problems.append(f"seq {ev['seq']}: payload without a carried object")
            q = MotionQuery(
                wps[0], (wps[-1],), ev["moving_radius"], obstacles, world.bounds, payload=payload,
                resolution=ev["resolution"],
            )
            res = ev["resolution"] / 2
            if not q.free(np.array(wps[0].xy), wps[0].theta)[0]:
                problems.append(f"seq {ev['seq']}: collision at {wps[0]}")
            for a, b in zip(wps, wps[1:]):
                if payload is not None and abs(b.theta - wps[0].theta) > 1e-12:
                    problems.append(f"seq {ev['seq']}: heading changed while carrying")
                if not q.segment_free(a.xy, b.xy, b.theta, res):
                    problems.append(f"seq {ev['seq']}: collision between {a} and {b}")
                    break
            configs[robot] = wps[-1]
        elif kind == "ack":
            awaiting_ack[robot] = False
        elif kind == "tp_step" and awaiting_ack.get(robot):
            problems.append(f"seq {ev['seq']}: {robot} planned again before acknowledging")
    turns = sorted((ev["start"], ev["end"], ev["robot"]) for ev in trace if ev.get("kind") == "turn")
    for (s0, e0, r0), (s1, e1, r1) in zip(turns, turns[1:]):
        if s1 < e0 - 1e-12:
            problems.append(f"turns of {r0} and {r1} overlap")
    if expect_success:
        for o in world.objects:
            if o.kind is Kind.TARGET and o.status is not Status.RETRIEVED:
                problems.append(f"target {o.id} not retrieved")
    for o in world.objects:
        if o.status is Status.REMOVED_TO_SAFE and not any(s.rect.contains_disc(o.center, o.radius) for s in world.safe_regions):
            problems.append(f"{o.id} left outside the safe regions")
        if o.status is Status.GRASPED:
            problems.append(f"{o.id} still held at the end")
    return problems


def offset_of(robot, obj, pose: Configuration) -> float:
    """Grasp offset (relative to the approach axis) of a grasp pose."""
    phi = math.atan2(pose.y - obj.center[1], pose.x - obj.center[0])
    return wrap_angle(phi - approach_axis(robot, obj))
