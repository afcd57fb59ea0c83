"""Planar motion layer for a free-flying end-effector disc.

The moving body is the end-effector disc, optionally with a carried object
rigidly attached ahead of it along the heading (a *payload*). Planning is a
goal-biased RRT over positions; the heading is held fixed along a plan, so a
payload keeps its offset direction throughout a transfer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CONTACT_TOL, discs_clear, point_segment_distance, unit, wrap_angle
from .world import Configuration, ObjectDisc, Rect, RobotModel, Status, WorkspaceModel, safe_cells

STANDOFF = 0.005
DEFAULT_STEP = 0.02
DEFAULT_GOAL_BIAS = 0.1
DEFAULT_ITERATIONS = 5000
DEFAULT_RESOLUTION = 0.005
GRASP_STEP = math.pi / 18
QUERY_MARGIN = 0.1


class MotionError(Exception):
    pass


class StartInCollision(MotionError):
    """The query's start configuration is not collision-free (caller bug)."""


class NoGraspReachable(MotionError):
    pass


class TransferInfeasible(MotionError):
    pass


def grasp_pose(target: ObjectDisc, axis: float, offset: float, ee_radius: float) -> Configuration:
    """Side-grasp pose at ``axis + offset`` around the target, facing its center."""
    if abs(offset) > math.pi / 2 + 1e-12:
        raise ValueError("grasp offset must lie in [-pi/2, pi/2]")
    phi = axis + offset
    d = target.radius + ee_radius + STANDOFF
    cx, cy = target.center
    return Configuration(cx + d * math.cos(phi), cy + d * math.sin(phi), wrap_angle(phi + math.pi))


def grasp_offsets(step: float = GRASP_STEP) -> np.ndarray:
    """Sampled offsets ``-pi/2, -pi/2 + step, ...`` up to ``+pi/2``."""
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(math.floor(math.pi / step + 1e-9))
    offsets = -math.pi / 2 + step * np.arange(n + 1)
    if abs(offsets[-1] - math.pi / 2) < 1e-9:
        offsets[-1] = math.pi / 2
    return offsets


def approach_axis(robot: RobotModel, obj: ObjectDisc) -> float:
    """Direction from the object's center toward the robot base."""
    return math.atan2(robot.base[1] - obj.center[1], robot.base[0] - obj.center[0])


def pose_in_reach(world: WorkspaceModel, robot: RobotModel, pose: Configuration) -> bool:
    d = math.hypot(pose.x - robot.base[0], pose.y - robot.base[1])
    return robot.reach_min <= d <= robot.reach_max and world.bounds.contains_disc(pose.xy, robot.ee_radius)


@dataclass(frozen=True)
class Payload:
    """A carried disc centered ``offset`` ahead of the end-effector."""

    offset: float
    radius: float


@dataclass
class MotionQuery:
    start: Configuration
    goals: tuple[Configuration, ...]
    moving_radius: float
    obstacles: np.ndarray
    bounds: Rect
    max_iterations: int = DEFAULT_ITERATIONS
    seed: int = 0
    payload: Payload | None = None
    step: float = DEFAULT_STEP
    goal_bias: float = DEFAULT_GOAL_BIAS
    resolution: float = DEFAULT_RESOLUTION

    def __post_init__(self):
        self.goals = tuple(self.goals)
        self.obstacles = np.asarray(self.obstacles, dtype=float).reshape(-1, 3)
        if not self.goals:
            raise ValueError("goal set must be non-empty")
        if not self.moving_radius > 0:
            raise ValueError("moving_radius must be positive")
        if self.payload is not None and any(abs(g.theta - self.start.theta) > 1e-12 for g in self.goals):
            raise ValueError("payload transfers keep the heading fixed")

    # -- collision model -------------------------------------------------
    def free(self, xy: np.ndarray, theta: float) -> np.ndarray:
        """Validity of end-effector positions ``xy`` (k, 2) at heading ``theta``."""
        xy = np.atleast_2d(xy)
        b = self.bounds
        r = self.moving_radius
        ok = (xy[:, 0] - r >= b.x) & (xy[:, 0] + r <= b.x1) & (xy[:, 1] - r >= b.y) & (xy[:, 1] + r <= b.y1)
        ok &= discs_clear(xy, r, self.obstacles)
        if self.payload is not None:
            p = xy + self.payload.offset * unit(theta)
            pr = self.payload.radius
            ok &= (p[:, 0] - pr >= b.x) & (p[:, 0] + pr <= b.x1) & (p[:, 1] - pr >= b.y) & (p[:, 1] + pr <= b.y1)
            ok &= discs_clear(p, pr, self.obstacles)
        return ok

    def segment_free(self, a, b, theta: float, resolution: float | None = None) -> bool:
        """Straight move from ``a`` to ``b`` at fixed heading.

        Without ``resolution`` the swept discs are tested exactly (the bounds
        are convex, so checking the end point covers them). With a
        ``resolution`` the segment is sampled instead.
        """
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if resolution is not None:
            n = max(1, int(math.ceil(float(np.linalg.norm(b - a)) / resolution)))
            t = np.linspace(0.0, 1.0, n + 1)[1:]
            return bool(self.free(a + t[:, None] * (b - a), theta).all())
        if not self.free(b, theta)[0]:
            return False
        obs = self.obstacles
        if len(obs) == 0:
            return True
        bodies = [(np.zeros(2), self.moving_radius)]
        if self.payload is not None:
            bodies.append((self.payload.offset * unit(theta), self.payload.radius))
        for shift, radius in bodies:
            d = point_segment_distance(obs[:, :2], a + shift, b + shift)
            if np.any(d < radius + obs[:, 2] - CONTACT_TOL):
                return False
        return True


@dataclass(frozen=True)
class MotionPlan:
    waypoints: tuple[Configuration, ...]
    resolution: float
    goal_index: int = 0
    iterations: int = 0

    @property
    def length(self) -> float:
        pts = np.array([w.xy for w in self.waypoints])
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())

    def reversed(self) -> "MotionPlan":
        return MotionPlan(tuple(reversed(self.waypoints)), self.resolution, 0, 0)


def _heading(query: MotionQuery, goal: Configuration) -> float:
    # collision geometry only depends on heading when a payload is attached
    return query.start.theta if query.payload is not None else goal.theta


def _build_plan(query: MotionQuery, points: list[np.ndarray], goal_index: int, iterations: int) -> MotionPlan:
    goal = query.goals[goal_index]
    theta = _heading(query, goal)
    mids = tuple(Configuration(float(p[0]), float(p[1]), theta) for p in points[1:-1])
    return MotionPlan((query.start, *mids, goal), query.resolution, goal_index, iterations)


def _shortcut(query: MotionQuery, points: list[np.ndarray], theta: float) -> list[np.ndarray]:
    out = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not query.segment_free(points[i], points[j], theta):
            j -= 1
        out.append(points[j])
        i = j
    return out


def plan_path(query: MotionQuery) -> MotionPlan | None:
    """Goal-biased RRT. Returns ``None`` when the iteration budget runs out.

    Raises :class:`StartInCollision` when the start itself is invalid.
    """
    start = np.array(query.start.xy)
    if not query.free(start, query.start.theta)[0]:
        raise StartInCollision(f"start {query.start} is in collision")
    goal_xy = np.array([g.xy for g in query.goals])
    goal_ok = np.array([query.free(goal_xy[i], _heading(query, g))[0] for i, g in enumerate(query.goals)])
    if not goal_ok.any():
        return None
    live = np.flatnonzero(goal_ok)
    theta = _heading(query, query.goals[live[0]])

    for gi in live:
        if query.segment_free(start, goal_xy[gi], theta):
            return _build_plan(query, [start, goal_xy[gi]], int(gi), 0)

    rng = np.random.default_rng(query.seed)
    b = query.bounds
    cap = query.max_iterations + 1
    nodes = np.empty((cap, 2))
    parent = np.empty(cap, dtype=np.int64)
    nodes[0] = start
    parent[0] = -1
    n = 1
    step = query.step
    for it in range(1, query.max_iterations + 1):
        if rng.random() < query.goal_bias:
            sample = goal_xy[live[rng.integers(len(live))]]
        else:
            sample = np.array([rng.uniform(b.x, b.x1), rng.uniform(b.y, b.y1)])
        d2 = np.einsum("ij,ij->i", nodes[:n] - sample, nodes[:n] - sample)
        near = int(np.argmin(d2))
        dist = math.sqrt(d2[near])
        if dist < 1e-12:
            continue
        new = sample if dist <= step else nodes[near] + (sample - nodes[near]) * (step / dist)
        if not query.segment_free(nodes[near], new, theta):
            continue
        nodes[n] = new
        parent[n] = near
        n += 1
        gd = np.linalg.norm(goal_xy[live] - new, axis=1)
        for k in np.argsort(gd, kind="stable"):
            if gd[k] > step:
                break
            gi = int(live[k])
            if query.segment_free(new, goal_xy[gi], theta):
                chain = []
                idx = n - 1
                while idx >= 0:
                    chain.append(nodes[idx].copy())
                    idx = parent[idx]
                chain.reverse()
                chain.append(goal_xy[gi])
                return _build_plan(query, _shortcut(query, chain, theta), gi, it)
    return None


def validate_plan(plan: MotionPlan, query: MotionQuery) -> list[str]:
    """Independent re-check: endpoint contract plus dense collision sweep at
    half the plan resolution. Returns a list of problems (empty when valid)."""
    problems = []
    wps = plan.waypoints
    if len(wps) < 2:
        problems.append("fewer than two waypoints")
        return problems
    if wps[0] != query.start:
        problems.append("first waypoint differs from the query start")
    if wps[-1] not in query.goals:
        problems.append("last waypoint is not in the goal set")
    if query.payload is not None and any(abs(w.theta - query.start.theta) > 1e-12 for w in wps):
        problems.append("heading changes while carrying")
    res = plan.resolution / 2
    for a, b in zip(wps, wps[1:]):
        if not query.free(np.array(a.xy), b.theta)[0] or not query.segment_free(a.xy, b.xy, b.theta, res):
            problems.append(f"collision between {a} and {b}")
    return problems


# ---------------------------------------------------------------------------
# Pick-and-place helpers
# ---------------------------------------------------------------------------


def query_bounds(world: WorkspaceModel, *points) -> Rect:
    """Sampling window: the table grown by a margin, stretched to cover the
    given points, clipped to the workspace bounds."""
    rects = [world.table.expanded(QUERY_MARGIN)]
    rects += [Rect(p[0] - QUERY_MARGIN, p[1] - QUERY_MARGIN, 2 * QUERY_MARGIN, 2 * QUERY_MARGIN) for p in points]
    r = Rect.bounding(rects)
    wb = world.bounds
    x0, y0 = max(r.x, wb.x), max(r.y, wb.y)
    x1, y1 = min(r.x1, wb.x1), min(r.y1, wb.y1)
    return Rect(x0, y0, x1 - x0, y1 - y0)


def grasp_candidates(
    world: WorkspaceModel,
    robot: RobotModel,
    obj: ObjectDisc,
    step: float = GRASP_STEP,
    extra_obstacles: np.ndarray | None = None,
) -> list[tuple[float, Configuration]]:
    """Reachable, collision-free grasp poses ordered by increasing |offset|."""
    axis = approach_axis(robot, obj)
    obstacles = world.obstacle_array(ignore={obj.id})
    if extra_obstacles is not None and len(extra_obstacles):
        obstacles = np.vstack([obstacles, extra_obstacles])
    out = []
    for off in sorted(grasp_offsets(step), key=lambda o: (abs(o), o)):
        pose = grasp_pose(obj, axis, float(off), robot.ee_radius)
        if pose_in_reach(world, robot, pose) and discs_clear(pose.xy, robot.ee_radius, obstacles)[0]:
            out.append((float(off), pose))
    return out


def payload_for(obj: ObjectDisc, robot: RobotModel) -> Payload:
    return Payload(obj.radius + robot.ee_radius + STANDOFF, obj.radius)


def transfer_goal(grasp: Configuration, payload: Payload, destination) -> Configuration:
    """End-effector pose that puts the carried object's center on ``destination``."""
    u = unit(grasp.theta)
    return Configuration(destination[0] - payload.offset * u[0], destination[1] - payload.offset * u[1], grasp.theta)


def next_free_cell(world: WorkspaceModel, robot_id: str):
    """First unoccupied placement cell across the robot's safe regions."""
    pitch = world.placement_pitch
    placed = [o for o in world.objects if o.status is Status.REMOVED_TO_SAFE]
    for region in world.regions_for(robot_id):
        for cell in safe_cells(region, pitch, world.table):
            if all(max(abs(o.center[0] - cell[0]), abs(o.center[1] - cell[1])) >= pitch / 2 for o in placed):
                return region, cell
    return None


def destination_clear(world: WorkspaceModel, obj: ObjectDisc, destination) -> bool:
    others = [(*o.center, o.radius) for o in world.objects if o.status is Status.REMOVED_TO_SAFE and o.id != obj.id]
    return bool(discs_clear(destination, obj.radius, np.array(others).reshape(-1, 3))[0])


@dataclass(frozen=True)
class PickPlacePlan:
    approach: MotionPlan
    transfer: MotionPlan | None
    offset: float
    grasp: Configuration
    queries: tuple = field(default=(), compare=False, repr=False)


def plan_pick_and_place(
    world: WorkspaceModel,
    robot: RobotModel | str,
    object_id: str,
    destination=None,
    *,
    start: Configuration | None = None,
    seed: int = 0,
    step: float = GRASP_STEP,
    max_iterations: int = DEFAULT_ITERATIONS,
    extra_obstacles: np.ndarray | None = None,
) -> PickPlacePlan:
    """Plan the approach to a grasp of ``object_id`` and the transfer of the
    grasped object to ``destination``.

    ``destination=None`` means the object is lifted straight off the table
    after grasping (target retrieval), so no planar transfer is planned. The
    world is not modified.
    """
    if isinstance(robot, str):
        robot = world.robot(robot)
    obj = world.object(object_id)
    if obj.status is not Status.ON_TABLE:
        raise ValueError(f"{object_id} is not on the table")
    start = robot.home if start is None else start
    payload = payload_for(obj, robot)
    if destination is not None:
        destination = (float(destination[0]), float(destination[1]))
        if not any(s.rect.contains_disc(destination, obj.radius) for s in world.safe_regions):
            raise TransferInfeasible("destination is not inside a safe region")
        if not destination_clear(world, obj, destination):
            raise TransferInfeasible("destination overlaps an object already placed there")

    candidates = grasp_candidates(world, robot, obj, step, extra_obstacles)
    if not candidates:
        raise NoGraspReachable(f"no reachable collision-free grasp pose for {object_id}")
    base_obstacles = world.obstacle_array()
    if extra_obstacles is not None and len(extra_obstacles):
        base_obstacles = np.vstack([base_obstacles, extra_obstacles])
    approach_q = MotionQuery(
        start,
        tuple(pose for _, pose in candidates),
        robot.ee_radius,
        base_obstacles,
        query_bounds(world, start.xy, *(p.xy for _, p in candidates)),
        max_iterations=max_iterations,
        seed=seed,
    )
    approach = plan_path(approach_q)
    if approach is None:
        raise NoGraspReachable(f"approach to {object_id} not found within budget")
    offset, grasp = candidates[approach.goal_index]
    if destination is None:
        return PickPlacePlan(approach, None, offset, grasp, (approach_q,))

    goal = transfer_goal(grasp, payload, destination)
    carried_obstacles = world.obstacle_array(ignore={obj.id})
    if extra_obstacles is not None and len(extra_obstacles):
        carried_obstacles = np.vstack([carried_obstacles, extra_obstacles])
    transfer_q = MotionQuery(
        grasp,
        (goal,),
        robot.ee_radius,
        carried_obstacles,
        query_bounds(world, grasp.xy, goal.xy, destination),
        max_iterations=max_iterations,
        seed=seed + 1,
        payload=payload,
    )
    if not transfer_q.free(np.array(goal.xy), goal.theta)[0]:
        raise TransferInfeasible("placement pose is blocked")
    transfer = plan_path(transfer_q)
    if transfer is None:
        raise TransferInfeasible(f"transfer of {object_id} not found within budget")
    return PickPlacePlan(approach, transfer, offset, grasp, (approach_q, transfer_q))
