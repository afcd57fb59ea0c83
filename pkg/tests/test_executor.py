import copy
import math

import numpy as np
import pytest

from conftest import disc, target
from mrtamp.executor import (
    ExecutorConfig,
    GroundingError,
    KnowledgeBase,
    ground,
    offset_of,
    replay_world,
    run,
    run_task,
    validate_trace,
)
from mrtamp.motion import approach_axis, grasp_candidates, grasp_pose, next_free_cell
from mrtamp.selection import select_obstacles
from mrtamp.taskgraph import Action
from mrtamp.world import Status, corridor_scenario, generate_scenario, safe_cells

BASE = (-0.1, 0.4)


def test_config_validation():
    with pytest.raises(ValueError):
        ExecutorConfig(failure_probability=1.0)
    with pytest.raises(ValueError):
        ExecutorConfig(coordination="parallel")
    assert ExecutorConfig(seeds={"motion": 5}).seeds == {"allocation": 0, "motion": 5, "failure": 0}


def test_ground_grasp_goal_set(make_world):
    w = make_world([target("t", 0.4, 0.4), disc("c", 0.3, 0.5)])
    kb = KnowledgeBase(w)
    q = ground(Action("grasp", "c"), kb, "r1")
    want = tuple(p for _, p in grasp_candidates(w, w.robot("r1"), w.object("c"), extra_obstacles=kb.parked_discs("r1")))
    assert q.goals == want and q.start == w.robot("r1").home


def test_ground_approach_matches_grasp_pose(make_world):
    w = make_world([target("t", 0.4, 0.4)])
    kb = KnowledgeBase(w)
    q = ground(Action("approach", "t", offset=0.3), kb, "r1")
    r, t = w.robot("r1"), w.object("t")
    assert q.goals == (grasp_pose(t, approach_axis(r, t), 0.3, r.ee_radius),)
    assert offset_of(r, t, q.goals[0]) == pytest.approx(0.3)


def test_ground_errors(make_world):
    w = make_world([target("t", 0.4, 0.4), disc("c", 0.3, 0.5)])
    region = w.regions_for("r1")[0]
    full = w
    cells = safe_cells(region, w.placement_pitch, w.table)
    # fill every cell with phantom parked discs by moving clones of c
    for i, cell in enumerate(cells):
        clone = disc(f"p{i:03d}", *cell, 0.01)
        full = full.__class__(full.table, full.objects + (clone,), full.robots, full.safe_regions, full.seed)
        full = full.moved(clone.id, Status.REMOVED_TO_SAFE, cell)
    assert next_free_cell(full, "r1") is None
    kb = KnowledgeBase(full)
    grasp = ground(Action("grasp", "c"), kb, "r1").goals[0]
    with pytest.raises(GroundingError, match="no free safe cell"):
        ground(Action("place", "c", region=0), kb, "r1", start=grasp)
    with pytest.raises(GroundingError, match="missing object"):
        ground(Action("grasp", "ghost"), kb, "r1")
    kb2 = KnowledgeBase(w.moved("c", Status.RETRIEVED))
    with pytest.raises(GroundingError):
        ground(Action("grasp", "c"), kb2, "r1")


def test_knowledge_base_single_object_in_hand(make_world):
    w = make_world([target("t", 0.4, 0.4), disc("c", 0.3, 0.5)])
    kb = KnowledgeBase(w)
    kb.set_object("r1", "grasp", "c", Status.GRASPED)
    with pytest.raises(RuntimeError):
        kb.set_object("r1", "grasp", "t", Status.GRASPED)
    assert replay_world(w, kb.log) == kb.world


def test_clutter_free_task():
    w = corridor_scenario(0)
    kb = KnowledgeBase(w)
    rep = run_task("r1", "target", kb)
    assert rep.solved and rep.network.depth == 1 and rep.metrics.rearranged == 0
    assert kb.world.object("target").status is Status.RETRIEVED


def test_single_obstacle_task():
    w = corridor_scenario(1)
    kb = KnowledgeBase(w)
    rep = run_task("r1", "target", kb)
    assert rep.solved and rep.network.depth == 2 and rep.metrics.rearranged == 1
    b = kb.world.object("b1")
    assert b.status is Status.REMOVED_TO_SAFE
    assert any(s.rect.contains_disc(b.center, b.radius) for s in kb.world.safe_regions)
    assert validate_trace(w, kb.log) == []


def test_failure_budget_exhaustion():
    w = corridor_scenario(1)
    kb = KnowledgeBase(w)
    rep = run_task("r1", "target", kb, ExecutorConfig(failure_probability=0.99, retry_budget=3))
    assert not rep.solved
    ends = [e for e in kb.log if e["kind"] == "task_end"]
    assert ends[-1]["reason"] == "retry budget exceeded"
    # failed grasps leave objects where they were
    assert kb.world.object("b1").center == w.object("b1").center
    assert validate_trace(w, kb.log, expect_success=False) == []


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_six_object_family(seed):
    w = generate_scenario(6, 2, 2, seed)
    rep = run(w, ExecutorConfig(seeds={"allocation": seed, "motion": seed, "failure": seed}))
    assert rep.success
    rows = rep.rows()
    assert [r["robot"] for r in rows] == ["r1", "r2"]
    assert set(rows[0]) == {"robot", "d", "tp_time", "mp_time", "mp_attempts", "executions", "rearranged",
                            "nodes_visited"}
    assert validate_trace(w, rep.trace) == []


def test_report_invariants_and_replay():
    w = generate_scenario(30, 2, 2, 4)
    rep = run(w, ExecutorConfig(failure_probability=0.2, seeds={"failure": 9}))
    for robot, m in rep.robots.items():
        placed = [e for e in rep.trace if e["kind"] == "object" and e["robot"] == robot
                  and e["status"] == "removed_to_safe"]
        assert m.rearranged == len(placed)
        assert m.mp_attempts >= m.executions
    assert replay_world(w, rep.trace) == rep.final_world
    ids = [o.id for o in w.objects]
    assert sorted(o.id for o in rep.final_world.objects) == sorted(ids)
    assert validate_trace(w, rep.trace, expect_success=rep.success) == []


def test_turns_never_overlap():
    w = generate_scenario(20, 2, 2, 2)
    rep = run(w)
    turns = sorted((e["start"], e["end"]) for e in rep.trace if e["kind"] == "turn")
    assert len(turns) >= 2
    for (s0, e0), (s1, e1) in zip(turns, turns[1:]):
        assert e0 <= s1
    motions = [e for e in rep.trace if e["kind"] == "motion"]
    for m in motions:
        assert any(s <= m["start"] and m["end"] <= e for s, e in turns)


def test_ack_before_next_planning_step():
    rep = run(generate_scenario(16, 2, 2, 5))
    waiting = {}
    for e in rep.trace:
        if e["kind"] == "motion":
            waiting[e["robot"]] = True
        elif e["kind"] == "ack":
            waiting[e["robot"]] = False
        elif e["kind"] == "tp_step":
            assert not waiting.get(e["robot"])


def test_validator_catches_tampering():
    w = corridor_scenario(2)
    rep = run(w)
    bad = copy.deepcopy(rep.trace)
    m = next(e for e in bad if e["kind"] == "motion" and e["action"] == "approach")
    b2 = w.object("b2").center
    m["waypoints"].insert(1, [b2[0], b2[1], m["waypoints"][0][2]])
    assert any("collision" in p for p in validate_trace(w, bad))
    bad = [e for e in rep.trace if not (e["kind"] == "object" and e["status"] == "retrieved")]
    assert any("not retrieved" in p for p in validate_trace(w, bad))


def test_second_task_sees_first_tasks_removal(make_world):
    d = 0.9 + 0.055 - 0.0005
    t1 = (BASE[0] + d, BASE[1])
    t2 = (BASE[0] + d * math.cos(math.radians(20)), BASE[1] + d * math.sin(math.radians(20)))
    b = (BASE[0] + 0.15 * math.cos(math.radians(10)), BASE[1] + 0.15 * math.sin(math.radians(10)))
    w = make_world([target("t1", *t1), target("t2", *t2), disc("b", *b)])
    assert select_obstacles(w, "r1", "t1") == {"b"} and select_obstacles(w, "r1", "t2") == {"b"}
    rep = run(w, ExecutorConfig(allocation_order="lexical"))
    assert rep.success and rep.allocation.schedule == {"r1": ["t1", "t2"]}
    assert rep.networks[("r1", "t1")].depth == 2
    # b is gone by the time t2 starts, so t2 is grasped directly
    assert rep.networks[("r1", "t2")].depth == 1
    assert rep.networks[("r1", "t2")].graphs[0].snapshot.object("b").status is Status.REMOVED_TO_SAFE
    assert rep.robots["r1"].rearranged == 1


def test_run_is_deterministic():
    w = generate_scenario(20, 2, 2, 6)
    a, b = run(w), run(w)
    strip = lambda t: [{k: v for k, v in e.items()} for e in t]
    assert strip(a.trace) == strip(b.trace)
    assert [(m.depth, m.mp_attempts, m.rearranged) for m in a.robots.values()] == \
        [(m.depth, m.mp_attempts, m.rearranged) for m in b.robots.values()]
