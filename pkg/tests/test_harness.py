import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mrtamp import cli
from mrtamp.executor import ExecutorConfig
from mrtamp.harness import (
    COLUMNS,
    BenchmarkSpec,
    MetricsTable,
    aggregate,
    bench,
    format_summary,
    linear_fit,
    rankdata,
    run_seeds,
    spearman,
)
from mrtamp.render import render_svg
from mrtamp.selection import build_selection_triangle, feasible_grasp_angles
from mrtamp.world import corridor_scenario, generate_scenario, save_scenario

TIMING = {"tp_time", "mp_time"}


def _row(objects, rep, robot, d, nodes, success=True):
    return dict(objects=objects, rep=rep, robot=robot, seed=1, success=success, d=d, tp_time=0.5, mp_time=0.25,
                mp_attempts=2 * d, executions=3 * d, rearranged=max(d - 1, 0), nodes_visited=nodes,
                violations=0, error="")


def test_spec_validation():
    with pytest.raises(ValueError):
        BenchmarkSpec(object_counts=(8, 6))
    with pytest.raises(ValueError):
        BenchmarkSpec(repetitions=0)
    with pytest.raises(ValueError):
        BenchmarkSpec(robots=3, targets=2)


def test_run_seeds_distinct_and_stable():
    a = run_seeds(0, 16, 1)
    assert a == run_seeds(0, 16, 1)
    assert len(set(a.values())) == 4
    assert a != run_seeds(0, 16, 2) and a != run_seeds(1, 16, 1)


def test_csv_round_trip(tmp_path):
    table = MetricsTable([_row(6, 0, "r1", 1, 6), _row(6, 0, "r2", 2, 12), _row(8, 0, "r1", 0, 0, False)])
    path = tmp_path / "m.csv"
    table.to_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(COLUMNS)
    assert MetricsTable.from_csv(path).rows == table.rows


def test_csv_header_checked(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("objects,rep\n6,0\n")
    with pytest.raises(ValueError):
        MetricsTable.from_csv(path)


def test_spearman_hand_example():
    # counts against mean depths with one inversion (16 vs 12) and a tie
    x = [6, 8, 9, 12, 16, 20, 30, 49, 64]
    y = [1.0, 1.5, 1.5, 2.5, 2.0, 3.0, 4.0, 6.0, 7.0]
    # ranks of y: 1, 2.5, 2.5, 5, 4, 6, 7, 8, 9; d^2 sum over ranks = 0.25+0.25+1+1 = 2.5
    assert rankdata(y) == [1, 2.5, 2.5, 5, 4, 6, 7, 8, 9]
    ry = np.array([1, 2.5, 2.5, 5, 4, 6, 7, 8, 9])
    rx = np.arange(1, 10)
    want = np.corrcoef(rx, ry)[0, 1]
    assert spearman(x, y) == pytest.approx(want)
    assert spearman(x, y) > 0.95


@pytest.mark.filterwarnings("ignore::scipy.stats.ConstantInputWarning")
@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), min_size=3, max_size=30))
def test_spearman_matches_scipy(pairs):
    x, y = [p[0] for p in pairs], [p[1] for p in pairs]
    ref = stats.spearmanr(x, y).statistic
    got = spearman(x, y)
    if math.isnan(ref):
        assert math.isnan(got)
    else:
        assert got == pytest.approx(ref, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.floats(-50, 50)), min_size=3, max_size=40))
def test_linear_fit_matches_scipy(pairs):
    x, y = [p[0] for p in pairs], [p[1] for p in pairs]
    if len(set(x)) < 2:
        with pytest.raises(ValueError):
            linear_fit(x, y)
        return
    ref = stats.linregress(x, y)
    fit = linear_fit(x, y)
    assert fit.slope == pytest.approx(ref.slope, abs=1e-9)
    assert fit.intercept == pytest.approx(ref.intercept, abs=1e-9)
    if np.var(y) > 1e-9:
        assert fit.r2 == pytest.approx(ref.rvalue**2, abs=1e-9)


def test_aggregate_exact_template_multiple():
    rows = [_row(c, 0, r, d, 6 * d) for c, d in ((6, 1), (8, 2), (9, 3), (12, 4)) for r in ("r1", "r2")]
    s = aggregate(MetricsTable(rows))
    assert s.fit.r2 == pytest.approx(1.0) and s.fit.slope == pytest.approx(6.0)
    assert s.bound_violations == [] and s.success_rate == 1.0
    assert s.mean_d == {6: 1.0, 8: 2.0, 9: 3.0, 12: 4.0} and s.spearman_rho == pytest.approx(1.0)
    assert "R^2 = 1.0000" in format_summary(s)


def test_aggregate_single_row_and_failures():
    s = aggregate(MetricsTable([_row(6, 0, "r1", 2, 10)]))
    assert s.per_depth == {2: {"rows": 1, "nodes_visited": 10, "mp_attempts": 4, "mp_time": 0.25}}
    assert s.mean_d == {6: 2.0} and s.fit is None and math.isnan(s.spearman_rho)
    t = MetricsTable([_row(6, 0, "r1", 1, 20), _row(6, 1, "r1", 0, 0, False)])
    s = aggregate(t)
    assert len(s.bound_violations) == 1 and s.failures == [(6, 1)] and s.success_rate == 0.5
    with pytest.raises(ValueError):
        aggregate(MetricsTable())


def test_bench_small_deterministic():
    spec = BenchmarkSpec(object_counts=(6, 12), repetitions=2)
    a, b = bench(spec), bench(spec)
    assert len(a) == 2 * 2 * 2
    strip = lambda t: [{k: v for k, v in r.items() if k not in TIMING} for r in t.rows]
    assert strip(a) == strip(b)
    assert all(r["success"] and r["violations"] == 0 for r in a.rows)
    assert [(r["objects"], r["rep"], r["robot"]) for r in a.rows] == [
        (c, k, r) for c in (6, 12) for k in (0, 1) for r in ("r1", "r2")]


def test_render_deterministic_with_overlays():
    w = generate_scenario(20, 2, 2, 3)
    tri = build_selection_triangle(w, "r1", feasible_grasp_angles(w, "r1", w.targets[0].id))
    a = render_svg(w, triangles=[tri], paths=[[(0.1, 0.1), (0.2, 0.3)]])
    assert a == render_svg(w, triangles=[tri], paths=[[(0.1, 0.1), (0.2, 0.3)]])
    assert a.count('class="selection-triangle"') == 1
    assert a.count("<circle class=\"object") == 20
    assert a.count(" selected\"") == len(tri.selected)
    assert 'class="path"' in a


def test_render_empty_world():
    w = generate_scenario(6, 2, 2, 0)
    svg = render_svg(replace(w, objects=()))
    assert "<circle class=\"object" not in svg
    assert svg.count('class="table"') == 1 and svg.count('class="robot-base"') == 2


# -- command line -------------------------------------------------------------
@pytest.fixture
def scene(tmp_path):
    path = tmp_path / "scene.json"
    save_scenario(generate_scenario(12, 2, 2, 1), path)
    return path


def test_cli_gen_and_run_trace(tmp_path, scene, capsys):
    out = tmp_path / "g.json"
    assert cli.main(["gen", "--objects", "8", "--seed", "2", "--out", str(out)]) == 0
    trace, graphs, svg = tmp_path / "t.ndjson", tmp_path / "g.ndjson", tmp_path / "r.svg"
    rc = cli.main(["run", "--scenario", str(scene), "--trace", str(trace), "--graph-trace", str(graphs),
                   "--render", str(svg)])
    assert rc == 0
    assert "trace problems: 0" in capsys.readouterr().out
    events = [json.loads(line) for line in trace.read_text().splitlines()]
    assert [e["seq"] for e in events] == list(range(len(events)))
    assert {"plan", "motion", "ack", "turn", "task_end"} <= {e["kind"] for e in events}
    assert all("robot" in json.loads(line) for line in graphs.read_text().splitlines())
    assert svg.read_text().startswith("<?xml")


def test_cli_select_allocate_plan(tmp_path, scene, capsys):
    tid = generate_scenario(12, 2, 2, 1).targets[0].id
    assert cli.main(["select", "--scenario", str(scene), "--robot", "r1", "--target", tid]) == 0
    assert "selected:" in capsys.readouterr().out
    csv_path = tmp_path / "a.csv"
    assert cli.main(["allocate", "--scenario", str(scene), "--mode", "eq1", "--csv", str(csv_path)]) == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "task,robot,raw_count,corrected_count,utility,chosen"
    assert sum(int(line.rsplit(",", 1)[1]) for line in lines[1:]) == 2
    assert cli.main(["plan", "--scenario", str(scene), "--to", "0.3,0.1"]) == 0
    assert "length:" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, scene, capsys):
    assert cli.main(["run", "--scenario", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"objects": 3}')
    assert cli.main(["run", "--scenario", str(bad)]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["bench", "--reps", "x"])
    assert exc.value.code == 2
    assert cli.main(["select", "--scenario", str(scene), "--robot", "r1", "--target", "nope"]) == 2
    # a goal inside the target disc cannot be reached
    t = generate_scenario(12, 2, 2, 1).targets[0]
    assert cli.main(["plan", "--scenario", str(scene), "--to", f"{t.center[0]},{t.center[1]}"]) == 1
    assert cli.main(["run", "--scenario", str(scene), "--p", "1.5"]) == 2


def test_cli_corridor_run(tmp_path, capsys):
    path = tmp_path / "c.json"
    save_scenario(corridor_scenario(2), path)
    assert cli.main(["run", "--scenario", str(path)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[1].split()[:2] == ["r1", "3"]
