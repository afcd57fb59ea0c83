import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import disc, target
from oracles import fan_oracle, selection_oracle
from mrtamp.geometry import unit
from mrtamp.motion import grasp_pose
from mrtamp.selection import (
    NoFeasibleGrasp,
    build_selection_triangle,
    feasible_grasp_angles,
    is_graspable,
    select_obstacles,
)
from mrtamp.world import Status, corridor_scenario, generate_scenario

BASE = (-0.1, 0.4)  # base of the single left robot in assembled worlds


def with_ee(world, ee):
    return replace(world, robots=tuple(replace(r, ee_radius=ee) for r in world.robots))


def test_mid_reach_target_has_full_fan(make_world):
    w = make_world([target("t", BASE[0] + 0.49, 0.4)])
    fan = feasible_grasp_angles(w, "r1", "t")
    assert len(fan.valid_angles) == 19
    assert fan.alpha == pytest.approx(math.pi / 2) and fan.beta == pytest.approx(-math.pi / 2)
    assert fan_oracle(w, "r1", "t")[1] == list(fan.valid_angles)


def test_out_of_reach_target(make_world):
    w = make_world([target("t", 0.87, 0.4)])  # 0.97 m > reach + radius + ee
    with pytest.raises(NoFeasibleGrasp):
        feasible_grasp_angles(w, "r1", "t")
    assert not is_graspable(w, "r1", "t")


def test_only_head_on_near_reach_limit():
    w = corridor_scenario(0)
    fan = feasible_grasp_angles(w, "r1", "target")
    assert fan.valid_angles == (0.0,) and fan.alpha == fan.beta == 0.0
    assert fan_oracle(w, "r1", "target")[1] == [0.0]


def test_non_table_target_rejected(make_world):
    w = make_world([target("t", 0.4, 0.4)]).moved("t", Status.RETRIEVED)
    with pytest.raises(ValueError):
        feasible_grasp_angles(w, "r1", "t")


def test_no_clutter_minimal_rays(make_world):
    w = make_world([target("t", 0.4, 0.4)])
    tri = build_selection_triangle(w, "r1", feasible_grasp_angles(w, "r1", "t"))
    assert tri.selected == frozenset()
    assert tri.ray_lengths == (0.02, 0.02)
    assert tri.vertices[0] == (0.4, 0.4)


def test_adjacent_on_axis_obstacle_selected_with_full_fan(make_world):
    # target r=0.02, blocker 5 mm in front of it on the approach axis
    w = with_ee(make_world([target("t", 0.39, 0.4, 0.02), disc("b", 0.345, 0.4, 0.02)]), 0.04)
    fan = feasible_grasp_angles(w, "r1", "t")
    assert fan.alpha == pytest.approx(math.pi / 2) and fan.beta == pytest.approx(-math.pi / 2)
    assert select_obstacles(w, "r1", "t") == {"b"}
    oracle, marginal = selection_oracle(w, "r1", "t")
    assert oracle == {"b"} and not marginal
    # the head-on grasp pose really collides with the blocker
    pose = grasp_pose(w.object("t"), fan.axis, 0.0, 0.04)
    assert math.dist(pose.xy, (0.345, 0.4)) < 0.04 + 0.02


def test_obstacle_behind_target_ignored(make_world):
    w = with_ee(make_world([target("t", 0.39, 0.4, 0.02), disc("b", 0.49, 0.4, 0.02)]), 0.04)
    assert select_obstacles(w, "r1", "t") == frozenset()
    assert selection_oracle(w, "r1", "t")[0] == set()


def _fan_scene(make_world):
    # target 0.93 m from the base: fan spans -50 to +50 degrees
    tx = BASE[0] + 0.93
    axis = math.pi
    c = np.array([tx, 0.4])
    objs = [target("t", tx, 0.4, 0.03)]
    for name, ang, dist in [("a1", 50, 0.15), ("a2", 50, 0.3), ("b1", -50, 0.2), ("mid", 0, 0.18)]:
        p = c + dist * unit(axis + math.radians(ang))
        objs.append(disc(name, *p, 0.025))
    objs.append(disc("side", *(c + 0.2 * unit(axis + math.radians(100))), 0.025))
    objs.append(disc("back", tx + 0.1, 0.4, 0.025))
    objs.append(disc("far", 0.2, 0.1, 0.025))
    return make_world(objs)


def test_blockers_between_robot_and_target_selected(make_world):
    w = _fan_scene(make_world)
    fan = feasible_grasp_angles(w, "r1", "t")
    assert math.degrees(fan.alpha) == pytest.approx(50) and math.degrees(fan.beta) == pytest.approx(-50)
    sel = select_obstacles(w, "r1", "t")
    assert sel == {"a1", "a2", "b1", "mid"}
    oracle, marginal = selection_oracle(w, "r1", "t")
    assert oracle == sel and not marginal


def test_ray_ends_at_far_edge_of_last_hit(make_world):
    w = _fan_scene(make_world)
    tri = build_selection_triangle(w, "r1", feasible_grasp_angles(w, "r1", "t"))
    assert tri.ray_lengths[0] == pytest.approx(0.3 + 0.025)
    assert tri.ray_lengths[1] == pytest.approx(0.2 + 0.025)


def test_selection_deterministic_and_never_contains_target():
    for seed in range(30):
        w = generate_scenario(30, 2, 2, seed)
        for r in w.robots:
            for t in w.targets:
                try:
                    a = select_obstacles(w, r, t.id)
                except NoFeasibleGrasp:
                    continue
                assert a == select_obstacles(w, r, t.id)
                assert t.id not in a


def _reachable_pairs(n_worlds, seed0=0):
    rng = np.random.default_rng(seed0)
    out = []
    seed = seed0
    while len(out) < n_worlds:
        w = generate_scenario(int(rng.integers(6, 50)), 2, 2, seed)
        seed += 1
        r = w.robots[seed % 2]
        t = w.targets[0].id
        if is_graspable(w, r, t):
            out.append((w, r, t))
    return out


def test_inflation_monotone_with_fixed_fan():
    for w, r, t in _reachable_pairs(100, 1000):
        fan = feasible_grasp_angles(w, r, t)
        small = build_selection_triangle(w, r, fan, inflation=0.01).selected
        large = build_selection_triangle(w, r, fan, inflation=0.03).selected
        assert small <= large


def test_grid_oracle_on_small_sample():
    for w, r, t in _reachable_pairs(20, 5000):
        got = select_obstacles(w, r, t)
        oracle, marginal = selection_oracle(w, r, t)
        assert (got ^ oracle) <= marginal


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(8, 40))
def test_removal_never_pulls_in_farther_objects(seed, n):
    w = generate_scenario(n, 2, 2, seed)
    r, t = w.robots[0], w.targets[0]
    try:
        fan = feasible_grasp_angles(w, r, t.id)
    except NoFeasibleGrasp:
        return
    before = build_selection_triangle(w, r, fan).selected
    c = np.array(t.center)
    ua, ub = unit(fan.axis + fan.alpha), unit(fan.axis + fan.beta)
    for s in before:
        after = build_selection_triangle(w.moved(s, Status.REMOVED_TO_SAFE, w.object(s).center), r, fan).selected
        ps = np.array(w.object(s).center) - c
        for a in after - before:
            pa = np.array(w.object(a).center) - c
            assert not (pa @ ua > ps @ ua and pa @ ub > ps @ ub)
        assert after <= before - {s}
