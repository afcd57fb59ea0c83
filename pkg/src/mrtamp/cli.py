"""Command line entry point (``mrtamp``)."""
from __future__ import annotations

import argparse
import json
import sys

from . import allocation, harness, motion, selection
from .executor import ExecutorConfig, run, validate_trace
from .render import render
from .world import (
    Configuration,
    InvariantViolation,
    PlacementFailure,
    SchemaError,
    generate_scenario,
    load_scenario,
    save_scenario,
)

OK, PLANNING_FAILURE, USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 already; keep the message short
        self.print_usage(sys.stderr)
        self.exit(USAGE, f"{self.prog}: error: {message}\n")


def _pose(text: str) -> Configuration:
    parts = [float(p) for p in text.split(",")]
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError("expected x,y or x,y,theta")
    return Configuration(parts[0], parts[1], parts[2] if len(parts) == 3 else 0.0)


def _write_ndjson(path: str, events) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")


def cmd_gen(a) -> int:
    world = generate_scenario(a.objects, a.targets, a.robots, a.seed)
    save_scenario(world, a.out)
    print(f"wrote {a.out}: {len(world.objects)} objects, targets {[t.id for t in world.targets]}")
    return OK


def cmd_run(a) -> int:
    world = load_scenario(a.scenario)
    seed = a.seed if a.seed is not None else world.seed
    cfg = ExecutorConfig(
        failure_probability=a.p, seeds={"allocation": seed, "motion": seed, "failure": seed},
        allocation_mode=a.mode,
    )
    report = run(world, cfg)
    print("robot  d  tp_time  mp_time  mp_attempts  executions  rearranged  nodes_visited")
    for r in report.rows():
        print(f"{r['robot']:5s} {r['d']:2d} {r['tp_time']:8.3f} {r['mp_time']:8.3f} {r['mp_attempts']:12d} "
              f"{r['executions']:11d} {r['rearranged']:11d} {r['nodes_visited']:14d}")
    problems = validate_trace(world, report.trace, expect_success=report.success)
    print(f"success: {report.success}  trace problems: {len(problems)}")
    for p in problems:
        print("  " + p)
    if a.trace:
        _write_ndjson(a.trace, report.trace)
    if a.graph_trace:
        _write_ndjson(a.graph_trace, (
            {"robot": r, "task": t, **ev} for (r, t), net in report.networks.items() for ev in net.trace
        ))
    if a.render:
        render(world, a.render, trace=report.trace)
    return OK if report.success and not problems else PLANNING_FAILURE


def cmd_bench(a) -> int:
    spec = harness.BenchmarkSpec(
        object_counts=tuple(sorted(a.counts)), repetitions=a.reps, robots=a.robots, targets=a.targets,
        base_seed=a.seed, config=ExecutorConfig(failure_probability=a.p),
    )

    def progress(count, rep, rows, dt):
        print(f"objects={count} rep={rep} success={rows[0]['success']} d={[r['d'] for r in rows]} ({dt:.1f}s)",
              file=sys.stderr)

    table = harness.bench(spec, progress=progress)
    if a.csv:
        table.to_csv(a.csv)
    summary = harness.aggregate(table)
    print(harness.format_summary(summary))
    return OK if not summary.failures else PLANNING_FAILURE


def cmd_select(a) -> int:
    world = load_scenario(a.scenario)
    try:
        fan = selection.feasible_grasp_angles(world, a.robot, a.target, a.step)
    except selection.NoFeasibleGrasp as exc:
        print(exc)
        return PLANNING_FAILURE
    tri = selection.build_selection_triangle(world, a.robot, fan)
    print(f"fan (deg): {[round(d, 1) for d in selection.fan_degrees(fan)]}")
    print("vertices: " + "  ".join(f"({x:.4f}, {y:.4f})" for x, y in tri.vertices))
    print(f"selected: {sorted(tri.selected)}")
    if a.render:
        render(world, a.render, triangles=[tri])
    return OK


def cmd_allocate(a) -> int:
    world = load_scenario(a.scenario)
    mode = allocation.PAIRWISE if a.mode in ("eq1", allocation.PAIRWISE) else allocation.UNION
    try:
        alloc = allocation.allocate(world, seed=a.seed, mode=mode, order=a.order)
    except allocation.AllocationError as exc:
        print(exc)
        return PLANNING_FAILURE
    robots = alloc.robots
    print("task      " + "".join(f"{r:>14s}" for r in robots) + "   chosen  tie_break")
    for step in alloc.steps:
        cells = "".join(f"{str(step.corrected[r]):>6s} U={step.utilities[r]:5.3f}" for r in robots)
        print(f"{step.task:8s}  {cells}   {step.chosen:6s}  {step.tie_break}")
    print(f"total utility: {alloc.total_utility:.4f}")
    for r in robots:
        print(f"{r}: {alloc.schedule[r]}")
    if a.csv:
        with open(a.csv, "w", encoding="utf-8") as fh:
            fh.write("task,robot,raw_count,corrected_count,utility,chosen\n")
            for step in alloc.steps:
                for r in robots:
                    e = alloc.table.entries[(r, step.task)]
                    fh.write(f"{step.task},{r},{'' if e.raw_count is None else e.raw_count},"
                             f"{e.corrected_count!r},{e.utility!r},{int(step.chosen == r)}\n")
    return OK


def cmd_plan(a) -> int:
    world = load_scenario(a.scenario)
    robot = world.robot(a.robot) if a.robot else world.robots[0]
    start = a.start if a.start is not None else robot.home
    q = motion.MotionQuery(
        start, (a.goal,), robot.ee_radius, world.obstacle_array(placed=True),
        motion.query_bounds(world, start.xy, a.goal.xy), seed=a.seed, max_iterations=a.iterations,
    )
    try:
        plan = motion.plan_path(q)
    except motion.StartInCollision as exc:
        print(exc)
        return PLANNING_FAILURE
    if plan is None:
        print("no path found")
        return PLANNING_FAILURE
    for w in plan.waypoints:
        print(f"{w.x:.5f} {w.y:.5f} {w.theta:.5f}")
    print(f"length: {plan.length:.4f} m, iterations: {plan.iterations}")
    if a.render:
        render(world, a.render, paths=[[w.xy for w in plan.waypoints]])
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mrtamp", description="Multi-robot target retrieval in clutter.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a random scenario file")
    g.add_argument("--objects", type=int, required=True)
    g.add_argument("--targets", type=int, default=2)
    g.add_argument("--robots", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="allocate, plan and execute a scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--p", type=float, default=0.0, help="failure probability per execution")
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=[allocation.UNION, allocation.PAIRWISE], default=allocation.UNION)
    r.add_argument("--trace", help="event trace output (NDJSON)")
    r.add_argument("--graph-trace", help="graph network trace output (NDJSON)")
    r.add_argument("--render", help="SVG output")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="benchmark sweep over object counts")
    b.add_argument("--counts", type=int, nargs="+", default=list(harness.DEFAULT_COUNTS))
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--robots", type=int, default=2)
    b.add_argument("--targets", type=int, default=2)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--p", type=float, default=0.0)
    b.add_argument("--csv")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("select", help="obstacle selection for one robot and target")
    s.add_argument("--scenario", required=True)
    s.add_argument("--robot", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--step", type=float, default=motion.GRASP_STEP)
    s.add_argument("--render")
    s.set_defaults(func=cmd_select)

    al = sub.add_parser("allocate", help="print the utility table and assignment")
    al.add_argument("--scenario", required=True)
    al.add_argument("--seed", type=int, default=0)
    al.add_argument("--mode", choices=["union", "eq1", allocation.PAIRWISE], default="union")
    al.add_argument("--order", choices=["random", "lexical"], default="random")
    al.add_argument("--csv")
    al.set_defaults(func=cmd_allocate)

    pl = sub.add_parser("plan", help="plan a free end-effector motion")
    pl.add_argument("--scenario", required=True)
    pl.add_argument("--robot")
    pl.add_argument("--from", dest="start", type=_pose, help="x,y[,theta]; defaults to the robot home")
    pl.add_argument("--to", dest="goal", type=_pose, required=True)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--iterations", type=int, default=motion.DEFAULT_ITERATIONS)
    pl.add_argument("--render")
    pl.set_defaults(func=cmd_plan)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, InvariantViolation, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except PlacementFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return PLANNING_FAILURE


if __name__ == "__main__":
    sys.exit(main())
