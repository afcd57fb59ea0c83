"""AND/OR graph networks that grow one augmented graph per sub-task.

Every graph in a network is built from the same six-node template:

    task_done  <-(direct, cost 0)-  {direct_grasp}
    task_done  <-(rearrange, cost 1)-  {obstacle_selected, obstacle_grasped,
                                        obstacle_placed, virtual}
    virtual    <-(virtual arc)-  {obstacle_placed}

Solving the virtual node means the workspace changed; the parent is then
solved in a fresh graph built against the new workspace rather than in the
current one. A network therefore has depth ``1 + re-arrangements +
failure retries``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

from .motion import GRASP_STEP
from .selection import is_graspable, select_obstacles
from .world import Kind, Status, WorkspaceModel

ROOT = "task_done"
DIRECT = "direct_grasp"
SELECTED = "obstacle_selected"
GRASPED = "obstacle_grasped"
PLACED = "obstacle_placed"
VIRTUAL = "virtual"
TEMPLATE_SIZE = 6

ARC_DIRECT = "direct"
ARC_REARRANGE = "rearrange"
ARC_VIRTUAL = "virtual_arc"

DEFAULT_DEPTH_CAP = 256
DEFAULT_RETRIES = 3
DEFAULT_RETRY_BUDGET = 20


class NothingToRemove(Exception):
    pass


class DepthBudgetExceeded(Exception):
    pass


@dataclass(frozen=True)
class Action:
    kind: str  # "grasp", "place", "retrieve", "approach"
    obj: str
    region: int | None = None
    offset: float | None = None

    def __str__(self) -> str:
        if self.kind == "place":
            return f"place({self.obj}, region{self.region})"
        if self.kind == "approach":
            return f"approach({self.obj}, {self.offset:.4f})"
        return f"{self.kind}({self.obj})"


@dataclass
class AndOrNode:
    id: str
    label: str
    solved: bool = False
    terminal: str = "none"  # "none", "success" or "failure"


@dataclass
class HyperArc:
    id: str
    parent: str
    children: tuple[str, ...]
    actions: tuple[Action, ...] = ()
    cost: float = 0.0
    feasible: str = "unknown"  # "unknown", "yes" or "no"
    virtual: bool = False


@dataclass
class AugmentedGraph:
    index: int
    robot: str
    task: str
    nodes: dict[str, AndOrNode]
    arcs: dict[str, HyperArc]
    virtual_node: str
    virtual_arcs: tuple[str, ...]
    snapshot: WorkspaceModel
    obstacle: str | None = None
    pending: str | None = None
    expand_request: "Expand | None" = None
    visited: set[str] = field(default_factory=set)

    def alternatives(self, parent: str = ROOT) -> list[HyperArc]:
        """Non-virtual arcs into ``parent``, cheapest first."""
        arcs = [a for a in self.arcs.values() if a.parent == parent and not a.virtual]
        return sorted(arcs, key=lambda a: (a.cost, a.id))

    def terminals(self) -> list[AndOrNode]:
        parents = {a.parent for a in self.arcs.values()}
        return [n for n in self.nodes.values() if n.id not in parents]


@dataclass
class Transition:
    index: int
    kind: str  # "rearrangement" or "failure_retry"
    obstacle: str | None = None


@dataclass(frozen=True)
class NextActions:
    arc: HyperArc
    actions: tuple[Action, ...]


@dataclass(frozen=True)
class Expand:
    world: WorkspaceModel
    failure_retry: bool = False
    obstacle: str | None = None
    reason: str = ""


@dataclass(frozen=True)
class Solved:
    pass


@dataclass(frozen=True)
class Failed:
    reason: str


@dataclass
class GraphNetwork:
    robot: str
    task: str
    graphs: list[AugmentedGraph] = field(default_factory=list)
    transitions: list[Transition] = field(default_factory=list)
    excluded: set[str] = field(default_factory=set)
    failure_retries: int = 0
    depth_cap: int = DEFAULT_DEPTH_CAP
    retry_budget: int = DEFAULT_RETRY_BUDGET
    feasibility_retries: int = DEFAULT_RETRIES
    step: float = GRASP_STEP
    trace: list[dict] = field(default_factory=list)
    steps: int = 0

    @property
    def depth(self) -> int:
        return len(self.graphs)

    @property
    def nodes_visited(self) -> int:
        return sum(len(g.visited) for g in self.graphs)

    @property
    def newest(self) -> AugmentedGraph:
        return self.graphs[-1]

    def log(self, **event) -> None:
        event.setdefault("graph", self.depth - 1)
        event["step"] = self.steps
        event["timestamp"] = time.perf_counter()
        self.trace.append(event)


def removable_obstacles(
    world: WorkspaceModel, robot, target: str, step: float = GRASP_STEP, exclude=()
) -> list[str]:
    """Selected clutter the robot could grasp, nearest to its base first.

    Other targets are never re-arranged, so they are left out.
    """
    robot = world.robot(robot) if isinstance(robot, str) else robot
    selected = select_obstacles(world, robot, target, step)
    exclude = set(exclude)
    out = []
    for oid in selected:
        o = world.object(oid)
        if o.kind is not Kind.CLUTTER or o.status is not Status.ON_TABLE or oid in exclude:
            continue
        if is_graspable(world, robot, oid, step):
            out.append(o)
    bx, by = robot.base
    out.sort(key=lambda o: (math.hypot(o.center[0] - bx, o.center[1] - by), o.id))
    return [o.id for o in out]


def choose_obstacle(world: WorkspaceModel, robot, target: str, step: float = GRASP_STEP, exclude=()) -> str:
    """Obstacle to remove next: the removable one nearest the robot base,
    ties broken by id."""
    candidates = removable_obstacles(world, robot, target, step, exclude)
    if not candidates:
        raise NothingToRemove(f"nothing left to remove for {target}")
    return candidates[0]


def make_initial_graph(robot, task: str, world: WorkspaceModel, index: int = 0) -> AugmentedGraph:
    robot_id = robot if isinstance(robot, str) else robot.id
    nodes = {
        ROOT: AndOrNode(ROOT, f"{task} retrieved"),
        DIRECT: AndOrNode(DIRECT, f"{task} directly graspable", terminal="success"),
        SELECTED: AndOrNode(SELECTED, "obstacle selected", terminal="success"),
        GRASPED: AndOrNode(GRASPED, "obstacle grasped", terminal="success"),
        PLACED: AndOrNode(PLACED, "obstacle placed in safe region", terminal="success"),
        VIRTUAL: AndOrNode(VIRTUAL, "workspace updated"),
    }
    arcs = {
        ARC_DIRECT: HyperArc(ARC_DIRECT, ROOT, (DIRECT,), (Action("grasp", task), Action("retrieve", task)), 0.0),
        ARC_REARRANGE: HyperArc(ARC_REARRANGE, ROOT, (SELECTED, GRASPED, PLACED, VIRTUAL), (), 1.0),
        ARC_VIRTUAL: HyperArc(ARC_VIRTUAL, VIRTUAL, (PLACED,), (), 0.0, virtual=True),
    }
    return AugmentedGraph(index, robot_id, task, nodes, arcs, VIRTUAL, (ARC_VIRTUAL,), world)


def new_network(robot, task: str, world: WorkspaceModel, **settings) -> GraphNetwork:
    robot_id = robot if isinstance(robot, str) else robot.id
    net = GraphNetwork(robot_id, task, **settings)
    net.graphs.append(make_initial_graph(robot_id, task, world, 0))
    net.log(event="graph", verdict="created")
    return net


def _visit(net: GraphNetwork, g: AugmentedGraph, *node_ids: str) -> None:
    for nid in node_ids:
        if nid not in g.visited:
            g.visited.add(nid)
            net.log(node=nid, verdict="visited")


def _solve(net: GraphNetwork, g: AugmentedGraph, node: str, via: str | None = None) -> None:
    g.nodes[node].solved = True
    net.log(node=node, arc=via, verdict="solved")


FeasibilityCallback = Callable[[HyperArc, int], bool]


def network_step(net: GraphNetwork, feasibility: FeasibilityCallback, world: WorkspaceModel | None = None):
    """Advance the newest graph by one decision.

    ``feasibility(arc, attempt)`` must report whether the arc's actions can be
    carried out in the current workspace (``world``, defaulting to the newest
    snapshot). Returns :class:`NextActions`, :class:`Expand`, :class:`Solved`
    or :class:`Failed`.
    """
    g = net.newest
    world = g.snapshot if world is None else world
    net.steps += 1
    _visit(net, g, ROOT)
    if g.pending is not None:
        raise RuntimeError("previous actions were not acknowledged")
    if g.nodes[ROOT].solved:
        net.log(node=ROOT, verdict="success")
        return Solved()
    if g.expand_request is not None:
        req = g.expand_request
        if req.failure_retry and net.failure_retries >= net.retry_budget:
            net.log(verdict="retry_budget_exceeded")
            return Failed("retry budget exceeded")
        return req

    failed_obstacle = None
    for arc in g.alternatives(ROOT):
        _visit(net, g, *arc.children)
        if arc.feasible == "no":
            continue
        if arc.id == ARC_REARRANGE:
            try:
                o = choose_obstacle(world, net.robot, net.task, net.step, net.excluded)
            except NothingToRemove:
                arc.feasible = "no"
                net.log(arc=arc.id, verdict="nothing_to_remove")
                continue
            g.obstacle = o
            arc.actions = (Action("grasp", o), Action("place", o, region=0))
        ok = False
        for attempt in range(1 + net.feasibility_retries):
            if feasibility(arc, attempt):
                ok = True
                break
        if ok:
            arc.feasible = "yes"
            g.pending = arc.id
            net.log(arc=arc.id, verdict="feasible")
            return NextActions(arc, arc.actions)
        arc.feasible = "no"
        net.log(arc=arc.id, verdict="infeasible")
        if arc.id == ARC_REARRANGE:
            failed_obstacle = g.obstacle

    if failed_obstacle is not None:
        # the obstacle could not be moved; retry in a new graph without it
        net.excluded.add(failed_obstacle)
        if net.failure_retries >= net.retry_budget:
            net.log(verdict="retry_budget_exceeded")
            return Failed("retry budget exceeded")
        g.expand_request = Expand(world, True, failed_obstacle, "obstacle not removable")
        return g.expand_request
    net.log(node=ROOT, verdict="failure")
    return Failed("no feasible alternative")


def acknowledge(net: GraphNetwork, success: bool, world: WorkspaceModel | None = None) -> None:
    """Report the outcome of executing the pending arc's actions."""
    g = net.newest
    if g.pending is None:
        raise RuntimeError("no pending arc to acknowledge")
    arc = g.arcs[g.pending]
    g.pending = None
    world = g.snapshot if world is None else world
    net.log(arc=arc.id, verdict="ack" if success else "ack_failed")
    if not success:
        arc.feasible = "unknown"
        g.expand_request = Expand(world, True, g.obstacle if arc.id == ARC_REARRANGE else None, "execution failed")
        return
    for child in arc.children:
        if child != g.virtual_node:
            _solve(net, g, child, arc.id)
    if g.virtual_node in arc.children:
        for vid in g.virtual_arcs:
            varc = g.arcs[vid]
            if all(g.nodes[c].solved for c in varc.children):
                _solve(net, g, g.virtual_node, vid)
        g.expand_request = Expand(world, False, g.obstacle, "re-arrangement done")
    elif all(g.nodes[c].solved for c in arc.children):
        _solve(net, g, arc.parent, arc.id)


def expand(net: GraphNetwork, world: WorkspaceModel, *, failure_retry: bool = False, obstacle: str | None = None) -> GraphNetwork:
    """Append a graph built against ``world``."""
    if net.depth + 1 > net.depth_cap:
        raise DepthBudgetExceeded(f"network depth would exceed {net.depth_cap}")
    kind = "failure_retry" if failure_retry else "rearrangement"
    net.transitions.append(Transition(len(net.transitions), kind, obstacle))
    if failure_retry:
        net.failure_retries += 1
    net.graphs.append(make_initial_graph(net.robot, net.task, world, net.depth))
    net.log(event="graph", verdict="created", transition=kind, obstacle=obstacle)
    return net


def check_and_semantics(net: GraphNetwork) -> list[str]:
    """Replay the trace: every solved parent must have had some arc whose
    children were all solved beforehand."""
    problems = []
    solved: dict[int, set[str]] = {}
    for ev in net.trace:
        if ev.get("verdict") != "solved":
            continue
        gi = ev["graph"]
        g = net.graphs[gi]
        done = solved.setdefault(gi, set())
        node = ev["node"]
        incoming = [a for a in g.arcs.values() if a.parent == node]
        if incoming:
            arc = g.arcs.get(ev.get("arc"))
            if arc is None or arc.parent != node or not all(c in done for c in arc.children):
                problems.append(f"graph {gi}: {node} solved without a fully solved arc")
        done.add(node)
    return problems
