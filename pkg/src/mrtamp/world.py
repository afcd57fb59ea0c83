"""Geometric world model for the cluttered table-top, plus scenario I/O.

Conventions: lengths in meters, angles in radians, the table occupies
``[0, w] x [0, h]``. Scenario generation draws from numpy's PCG64 generator
(``numpy.random.default_rng(seed)``), so a seed reproduces the same layout on
any platform numpy supports.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable

import jsonschema
import numpy as np

from .geometry import CONTACT_TOL, discs_clear

TABLE_W = 1.0
TABLE_H = 0.8
RADIUS_RANGE = (0.02, 0.04)
EE_RADIUS = 0.02
REACH_MIN = 0.08
REACH_MAX = 0.9
BASE_OFFSET = 0.1
HOME_OFFSET = 0.05
SAFE_GAP = 0.05
BOUNDS_MARGIN = 0.1
PLACEMENT_ATTEMPTS = 10_000
LAYOUT_ATTEMPTS = 100


class WorldError(Exception):
    pass


class PlacementFailure(WorldError):
    pass


class SchemaError(WorldError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class InvariantViolation(WorldError):
    def __init__(self, invariant: str, detail: str = ""):
        super().__init__(invariant if not detail else f"{invariant}: {detail}")
        self.invariant = invariant


class Kind(str, Enum):
    TARGET = "target"
    CLUTTER = "clutter"


class Status(str, Enum):
    ON_TABLE = "on_table"
    REMOVED_TO_SAFE = "removed_to_safe"
    GRASPED = "grasped"
    RETRIEVED = "retrieved"


@dataclass(frozen=True)
class Rect:
    x: float
    y: float
    w: float
    h: float

    @property
    def x1(self) -> float:
        return self.x + self.w

    @property
    def y1(self) -> float:
        return self.y + self.h

    def contains_disc(self, center, radius: float = 0.0, tol: float = CONTACT_TOL) -> bool:
        cx, cy = center
        return (
            self.x - tol <= cx - radius
            and cx + radius <= self.x1 + tol
            and self.y - tol <= cy - radius
            and cy + radius <= self.y1 + tol
        )

    def overlaps(self, other: "Rect") -> bool:
        """Interior overlap; shared edges do not count."""
        return self.x < other.x1 and other.x < self.x1 and self.y < other.y1 and other.y < self.y1

    def distance_to(self, point) -> float:
        px, py = point
        dx = max(self.x - px, 0.0, px - self.x1)
        dy = max(self.y - py, 0.0, py - self.y1)
        return math.hypot(dx, dy)

    def expanded(self, margin: float) -> "Rect":
        return Rect(self.x - margin, self.y - margin, self.w + 2 * margin, self.h + 2 * margin)

    @staticmethod
    def bounding(rects: Iterable["Rect"]) -> "Rect":
        rects = list(rects)
        x0 = min(r.x for r in rects)
        y0 = min(r.y for r in rects)
        x1 = max(r.x1 for r in rects)
        y1 = max(r.y1 for r in rects)
        return Rect(x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class Configuration:
    x: float
    y: float
    theta: float = 0.0

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class ObjectDisc:
    id: str
    center: tuple[float, float]
    radius: float
    kind: Kind
    status: Status = Status.ON_TABLE

    @property
    def is_target(self) -> bool:
        return self.kind is Kind.TARGET


@dataclass(frozen=True)
class RobotModel:
    id: str
    base: tuple[float, float]
    reach_min: float
    reach_max: float
    ee_radius: float
    home: Configuration


@dataclass(frozen=True)
class SafeRegion:
    rect: Rect
    owner: str  # robot id or "shared"


@dataclass(frozen=True)
class WorkspaceModel:
    table: Rect
    objects: tuple[ObjectDisc, ...]
    robots: tuple[RobotModel, ...]
    safe_regions: tuple[SafeRegion, ...]
    seed: int = 0

    # -- lookups ---------------------------------------------------------
    @cached_property
    def _object_index(self) -> dict[str, ObjectDisc]:
        return {o.id: o for o in self.objects}

    def object(self, object_id: str) -> ObjectDisc:
        try:
            return self._object_index[object_id]
        except KeyError:
            raise KeyError(f"unknown object {object_id!r}") from None

    def robot(self, robot_id: str) -> RobotModel:
        for r in self.robots:
            if r.id == robot_id:
                return r
        raise KeyError(f"unknown robot {robot_id!r}")

    @property
    def targets(self) -> tuple[ObjectDisc, ...]:
        return tuple(o for o in self.objects if o.kind is Kind.TARGET)

    @property
    def clutter(self) -> tuple[ObjectDisc, ...]:
        return tuple(o for o in self.objects if o.kind is Kind.CLUTTER)

    def on_table(self) -> tuple[ObjectDisc, ...]:
        return tuple(o for o in self.objects if o.status is Status.ON_TABLE)

    def regions_for(self, robot_id: str) -> tuple[SafeRegion, ...]:
        own = tuple(s for s in self.safe_regions if s.owner == robot_id)
        return own + tuple(s for s in self.safe_regions if s.owner == "shared")

    @cached_property
    def bounds(self) -> Rect:
        """Table plus safe regions, grown by a fixed margin."""
        return Rect.bounding([self.table, *(s.rect for s in self.safe_regions)]).expanded(BOUNDS_MARGIN)

    @cached_property
    def placement_pitch(self) -> float:
        """Safe-region grid pitch: twice the largest object diameter."""
        rmax = max((o.radius for o in self.objects), default=RADIUS_RANGE[1])
        return 4.0 * rmax

    def obstacle_array(self, ignore: Iterable[str] = (), *, placed: bool = False) -> np.ndarray:
        """(m, 3) array of ``x, y, r`` for on-table objects not in ``ignore``;
        ``placed=True`` adds objects already parked in safe regions."""
        ignore = set(ignore)
        keep = {Status.ON_TABLE, Status.REMOVED_TO_SAFE} if placed else {Status.ON_TABLE}
        rows = [(*o.center, o.radius) for o in self.objects if o.status in keep and o.id not in ignore]
        return np.array(rows, dtype=float).reshape(-1, 3)

    # -- functional updates ------------------------------------------------
    def with_object(self, obj: ObjectDisc) -> "WorkspaceModel":
        objects = tuple(obj if o.id == obj.id else o for o in self.objects)
        return replace(self, objects=objects)

    def moved(self, object_id: str, status: Status, center=None) -> "WorkspaceModel":
        o = self.object(object_id)
        new_center = o.center if center is None else (float(center[0]), float(center[1]))
        return self.with_object(replace(o, status=status, center=new_center))

    # -- invariants --------------------------------------------------------
    def validate(self) -> "WorkspaceModel":
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise InvariantViolation("object ids unique")
        rids = [r.id for r in self.robots]
        if not rids or len(set(rids)) != len(rids):
            raise InvariantViolation("robot ids unique")
        for o in self.objects:
            if not o.radius > 0:
                raise InvariantViolation("radius > 0", o.id)
            if o.kind is Kind.TARGET and o.status is Status.REMOVED_TO_SAFE:
                raise InvariantViolation("targets never removed to safe", o.id)
            if o.status is Status.ON_TABLE and not self.table.contains_disc(o.center, o.radius):
                raise InvariantViolation("objects inside table", o.id)
            if o.status is Status.REMOVED_TO_SAFE and not any(
                s.rect.contains_disc(o.center) for s in self.safe_regions
            ):
                raise InvariantViolation("removed objects inside safe regions", o.id)
        on = self.on_table()
        if len(on) > 1:
            arr = np.array([(*o.center, o.radius) for o in on])
            for i in range(len(on) - 1):
                if not discs_clear(arr[i, :2], arr[i, 2], arr[i + 1 :]).all():
                    raise InvariantViolation("objects pairwise non-overlapping", on[i].id)
        n_targets = len(self.targets)
        if n_targets < 1:
            raise InvariantViolation("at least one target")
        if n_targets < len(self.robots):
            raise InvariantViolation("T ≥ R", f"T={n_targets}, R={len(self.robots)}")
        t = self.table
        for r in self.robots:
            if not 0 < r.reach_min < r.reach_max:
                raise InvariantViolation("0 < reach_min < reach_max", r.id)
            if not r.ee_radius > 0:
                raise InvariantViolation("ee_radius > 0", r.id)
            bx, by = r.base
            if t.x < bx < t.x1 and t.y < by < t.y1:
                raise InvariantViolation("robot base outside table", r.id)
            if not self.regions_for(r.id):
                raise InvariantViolation("safe region per robot", r.id)
        for s in self.safe_regions:
            if s.rect.overlaps(t):
                raise InvariantViolation("safe regions disjoint from table")
            if s.owner != "shared" and s.owner not in rids:
                raise InvariantViolation("safe region owner", s.owner)
        n_clutter = len(self.clutter)
        for r in self.robots:
            capacity = sum(len(safe_cells(s, self.placement_pitch, t)) for s in self.regions_for(r.id))
            if capacity < n_clutter:
                raise InvariantViolation("safe region capacity", f"{r.id}: {capacity} < {n_clutter}")
        return self


def safe_cells(region: SafeRegion, pitch: float, table: Rect) -> list[tuple[float, float]]:
    """Placement grid of a safe region in row-major order, nearest row first."""
    r = region.rect
    cols = int(math.floor(r.w / pitch + 1e-9))
    rows = int(math.floor(r.h / pitch + 1e-9))
    xs = [r.x + pitch * (i + 0.5) for i in range(cols)]
    ys = [r.y + pitch * (j + 0.5) for j in range(rows)]
    cx = r.x + r.w / 2
    ys.sort(key=lambda y: (table.distance_to((cx, y)), y))
    return [(x, y) for y in ys for x in xs]


def disc_free(world: WorkspaceModel, center, radius: float, ignore: Iterable[str] = ()) -> bool:
    """True iff the disc stays inside the workspace bounds and overlaps no
    on-table object outside ``ignore``. Tangent discs count as free."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if not world.bounds.contains_disc(center, radius):
        return False
    return bool(discs_clear(center, radius, world.obstacle_array(ignore))[0])


# ---------------------------------------------------------------------------
# Scenario generation
# ---------------------------------------------------------------------------


def _make_robots(n_robots: int, table: Rect) -> tuple[RobotModel, ...]:
    robots = []
    per_side = [(n_robots + 1) // 2, n_robots // 2]
    for i in range(n_robots):
        side, k = i % 2, i // 2
        y = table.y + table.h * (k + 1) / (per_side[side] + 1)
        if side == 0:
            base = (table.x - BASE_OFFSET, y)
            home = Configuration(base[0] + HOME_OFFSET, y, 0.0)
        else:
            base = (table.x1 + BASE_OFFSET, y)
            home = Configuration(base[0] - HOME_OFFSET, y, math.pi)
        robots.append(RobotModel(f"r{i + 1}", base, REACH_MIN, REACH_MAX, EE_RADIUS, home))
    return tuple(robots)


def _make_safe_regions(robots, table: Rect, n_clutter: int, pitch: float) -> tuple[SafeRegion, ...]:
    cols = max(1, int(math.floor(table.w / pitch + 1e-9)))
    rows = max(1, math.ceil(n_clutter / cols))
    height = rows * pitch
    regions = []
    for i, robot in enumerate(robots):
        side, k = i % 2, i // 2
        if side == 0:
            y0 = table.y - SAFE_GAP - k * (height + SAFE_GAP) - height
        else:
            y0 = table.y1 + SAFE_GAP + k * (height + SAFE_GAP)
        regions.append(SafeRegion(Rect(table.x, y0, table.w, height), robot.id))
    return tuple(regions)


def _sample_layout(rng: np.random.Generator, table: Rect, n_objects: int) -> np.ndarray:
    placed = np.zeros((0, 3))
    for i in range(n_objects):
        for _ in range(PLACEMENT_ATTEMPTS):
            r = rng.uniform(*RADIUS_RANGE)
            x = rng.uniform(table.x + r, table.x1 - r)
            y = rng.uniform(table.y + r, table.y1 - r)
            if discs_clear((x, y), r, placed)[0]:
                placed = np.vstack([placed, (x, y, r)])
                break
        else:
            raise PlacementFailure(f"could not place object {i} of {n_objects} after {PLACEMENT_ATTEMPTS} attempts")
    return placed


def generate_scenario(n_objects: int, n_targets: int, n_robots: int, seed: int) -> WorkspaceModel:
    """Sample a non-overlapping disc layout with ``n_targets`` targets.

    Discs are rejection-sampled one at a time (radius uniform in
    ``RADIUS_RANGE``, center uniform over the table). Targets are then drawn
    by a seeded permutation among discs some robot can reach.
    """
    from .selection import NoFeasibleGrasp, feasible_grasp_angles

    if not (n_objects >= n_targets >= n_robots >= 1):
        raise ValueError("need n_objects >= n_targets >= n_robots >= 1")
    if seed < 0:
        raise ValueError("seed must be unsigned")
    rng = np.random.default_rng(seed)
    table = Rect(0.0, 0.0, TABLE_W, TABLE_H)
    robots = _make_robots(n_robots, table)
    width = max(2, len(str(n_objects - 1)))
    ids = [f"o{i:0{width}d}" for i in range(n_objects)]
    for _ in range(LAYOUT_ATTEMPTS):
        placed = _sample_layout(rng, table, n_objects)
        draft = WorkspaceModel(
            table,
            tuple(ObjectDisc(ids[i], (float(x), float(y)), float(r), Kind.CLUTTER) for i, (x, y, r) in enumerate(placed)),
            robots,
            (),
            seed,
        )
        targets: list[int] = []
        for i in rng.permutation(n_objects):
            for robot in robots:
                try:
                    feasible_grasp_angles(draft, robot, ids[i])
                except NoFeasibleGrasp:
                    continue
                targets.append(int(i))
                break
            if len(targets) == n_targets:
                break
        if len(targets) == n_targets:
            break
    else:
        raise PlacementFailure(f"no layout with {n_targets} reachable targets in {LAYOUT_ATTEMPTS} draws")
    objects = tuple(
        replace(o, kind=Kind.TARGET) if i in targets else o for i, o in enumerate(draft.objects)
    )
    pitch = 4.0 * float(placed[:, 2].max())
    regions = _make_safe_regions(robots, table, n_objects - n_targets, pitch)
    return WorkspaceModel(table, objects, robots, regions, seed).validate()


def assemble(objects, n_robots: int = 1, seed: int = 0) -> WorkspaceModel:
    """Wrap hand-placed discs in the standard workspace layout."""
    table = Rect(0.0, 0.0, TABLE_W, TABLE_H)
    robots = _make_robots(n_robots, table)
    objects = tuple(objects)
    n_clutter = sum(o.kind is Kind.CLUTTER for o in objects)
    pitch = 4.0 * max((o.radius for o in objects), default=RADIUS_RANGE[1])
    regions = _make_safe_regions(robots, table, max(n_clutter, 1), pitch)
    return WorkspaceModel(table, objects, robots, regions, seed).validate()


def corridor_scenario(k: int, *, radius: float = 0.03, gap: float = 0.01) -> WorkspaceModel:
    """A single robot and target with ``k`` discs in single file between them.

    The target sits just inside reach so only the head-on grasp is valid;
    the blocking discs line the approach axis, nearest to the target first.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    table = Rect(0.0, 0.0, TABLE_W, TABLE_H)
    base = _make_robots(1, table)[0].base
    standoff = radius + EE_RADIUS + 0.005
    tx = base[0] + REACH_MAX + standoff - 0.0005
    y = base[1]
    objects = [ObjectDisc("target", (tx, y), radius, Kind.TARGET)]
    for i in range(1, k + 1):
        objects.append(ObjectDisc(f"b{i}", (tx - i * (2 * radius + gap), y), radius, Kind.CLUTTER))
    return assemble(objects, 1, seed=k)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _schema() -> dict:
    text = resources.files(__package__).joinpath("scenario.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def to_dict(world: WorkspaceModel) -> dict:
    t = world.table
    if (t.x, t.y) != (0.0, 0.0):
        raise ValueError("scenario files assume the table origin at (0, 0)")
    return {
        "table": {"w": t.w, "h": t.h},
        "objects": [
            {"id": o.id, "x": o.center[0], "y": o.center[1], "r": o.radius, "kind": o.kind.value, "status": o.status.value}
            for o in world.objects
        ],
        "robots": [
            {
                "id": r.id,
                "bx": r.base[0],
                "by": r.base[1],
                "reach_min": r.reach_min,
                "reach_max": r.reach_max,
                "ee_radius": r.ee_radius,
                "home": {"x": r.home.x, "y": r.home.y, "theta": r.home.theta},
            }
            for r in world.robots
        ],
        "safe_regions": [
            {"x": s.rect.x, "y": s.rect.y, "w": s.rect.w, "h": s.rect.h, "owner": s.owner} for s in world.safe_regions
        ],
        "seed": world.seed,
    }


def _default_home(base, table: Rect) -> Configuration:
    cx, cy = table.x + table.w / 2, table.y + table.h / 2
    heading = math.atan2(cy - base[1], cx - base[0])
    return Configuration(base[0] + HOME_OFFSET * math.cos(heading), base[1] + HOME_OFFSET * math.sin(heading), heading)


def from_dict(data: dict) -> WorkspaceModel:
    """Build and validate a world from its JSON form."""
    validator = jsonschema.Draft7Validator(_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise SchemaError(path, err.message)
    table = Rect(0.0, 0.0, float(data["table"]["w"]), float(data["table"]["h"]))
    objects = tuple(
        ObjectDisc(
            o["id"],
            (float(o["x"]), float(o["y"])),
            float(o["r"]),
            Kind(o["kind"]),
            Status(o.get("status", "on_table")),
        )
        for o in data["objects"]
    )
    robots = []
    for r in data["robots"]:
        base = (float(r["bx"]), float(r["by"]))
        home = r.get("home")
        home = Configuration(float(home["x"]), float(home["y"]), float(home["theta"])) if home else _default_home(base, table)
        robots.append(
            RobotModel(r["id"], base, float(r["reach_min"]), float(r["reach_max"]), float(r["ee_radius"]), home)
        )
    regions = tuple(
        SafeRegion(Rect(float(s["x"]), float(s["y"]), float(s["w"]), float(s["h"])), s["owner"])
        for s in data["safe_regions"]
    )
    return WorkspaceModel(table, objects, tuple(robots), regions, int(data["seed"])).validate()


def save_scenario(world: WorkspaceModel, path) -> Path:
    path = Path(path)
    # json writes floats with repr(), which round-trips exactly
    path.write_text(json.dumps(to_dict(world), indent=2) + "\n", encoding="utf-8")
    return path


def load_scenario(path) -> WorkspaceModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"invalid JSON: {exc}") from exc
    return from_dict(data)
