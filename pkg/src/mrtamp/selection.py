"""Obstacle selection: which objects must be cleared before a target grasp.

For a robot-target pair the reachable side-grasp offsets are sampled with all
clutter ignored. Rays are cast from the target center along the extreme
offsets, each running until no obstacle lies further along its corridor. The
triangle spanned by the target center and the two ray ends, inflated by the
end-effector radius, marks the objects to re-arrange.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import CONTACT_TOL, point_ray_distance, point_triangle_distance, unit
from .motion import GRASP_STEP, approach_axis, grasp_offsets, grasp_pose, pose_in_reach
from .world import RobotModel, Status, WorkspaceModel


class NoFeasibleGrasp(Exception):
    def __init__(self, robot: str, target: str):
        super().__init__(f"robot {robot} has no reachable grasp on {target}")
        self.robot = robot
        self.target = target


@dataclass(frozen=True)
class GraspFan:
    robot: str
    target: str
    axis: float
    valid_angles: tuple[float, ...]

    @property
    def alpha(self) -> float:
        return max(self.valid_angles)

    @property
    def beta(self) -> float:
        return min(self.valid_angles)


@dataclass(frozen=True)
class SelectionTriangle:
    robot: str
    target: str
    vertices: tuple[tuple[float, float], ...]
    inflation: float
    selected: frozenset[str]
    ray_lengths: tuple[float, float] = (0.0, 0.0)


def _robot(world: WorkspaceModel, robot) -> RobotModel:
    return world.robot(robot) if isinstance(robot, str) else robot


def feasible_grasp_angles(world: WorkspaceModel, robot, target: str, step: float = GRASP_STEP) -> GraspFan:
    """Reachable side-grasp offsets around ``target``, clutter ignored."""
    robot = _robot(world, robot)
    obj = world.object(target)
    if obj.status is not Status.ON_TABLE:
        raise ValueError(f"{target} is not on the table")
    axis = approach_axis(robot, obj)
    valid = tuple(
        float(off)
        for off in grasp_offsets(step)
        if pose_in_reach(world, robot, grasp_pose(obj, axis, float(off), robot.ee_radius))
    )
    if not valid:
        raise NoFeasibleGrasp(robot.id, target)
    return GraspFan(robot.id, target, axis, valid)


def ray_length(obstacles: np.ndarray, origin, direction, half_width: float) -> float:
    """How far a ray must run to pass every obstacle touching its corridor.

    The corridor is the half-line grown by ``half_width``. The length is the
    far edge (projection plus radius) of the furthest intersected obstacle,
    and never less than ``half_width``.
    """
    if len(obstacles) == 0:
        return half_width
    centers, radii = obstacles[:, :2], obstacles[:, 2]
    hit = point_ray_distance(centers, origin, direction) <= half_width + radii + CONTACT_TOL
    if not hit.any():
        return half_width
    far = (centers[hit] - np.asarray(origin)) @ np.asarray(direction) + radii[hit]
    return max(half_width, float(far.max()))


def build_selection_triangle(
    world: WorkspaceModel, robot, fan: GraspFan, inflation: float | None = None
) -> SelectionTriangle:
    """Triangle from the target center along the fan's extreme offsets.

    ``inflation`` defaults to the robot's end-effector radius; it also sets the
    ray corridor half-width.
    """
    robot = _robot(world, robot)
    ee = robot.ee_radius if inflation is None else float(inflation)
    target = world.object(fan.target)
    c = np.asarray(target.center, dtype=float)
    others = [o for o in world.on_table() if o.id != target.id]
    obstacles = np.array([(*o.center, o.radius) for o in others]).reshape(-1, 3)
    ua = unit(fan.axis + fan.alpha)
    ub = unit(fan.axis + fan.beta)
    la = ray_length(obstacles, c, ua, ee)
    lb = ray_length(obstacles, c, ub, ee)
    tri = (tuple(c), tuple(c + la * ua), tuple(c + lb * ub))
    selected: frozenset[str] = frozenset()
    if others:
        dist = point_triangle_distance(obstacles[:, :2], tri)
        inside = dist <= ee + obstacles[:, 2] + CONTACT_TOL
        selected = frozenset(o.id for o, hit in zip(others, inside) if hit)
    vertices = tuple((float(x), float(y)) for x, y in tri)
    return SelectionTriangle(robot.id, target.id, vertices, ee, selected, (la, lb))


def select_obstacles(world: WorkspaceModel, robot, target: str, step: float = GRASP_STEP) -> frozenset[str]:
    """Objects to re-arrange before ``robot`` can grasp ``target``.

    Raises :class:`NoFeasibleGrasp` when the target is out of reach.
    """
    fan = feasible_grasp_angles(world, robot, target, step)
    return build_selection_triangle(world, robot, fan).selected


def is_graspable(world: WorkspaceModel, robot, object_id: str, step: float = GRASP_STEP) -> bool:
    try:
        feasible_grasp_angles(world, robot, object_id, step)
    except NoFeasibleGrasp:
        return False
    return True


def fan_degrees(fan: GraspFan) -> list[float]:
    return [math.degrees(a) for a in fan.valid_angles]
