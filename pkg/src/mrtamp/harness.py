"""Benchmark sweeps over object counts and their summaries."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .executor import ExecutorConfig, run, validate_trace
from .taskgraph import TEMPLATE_SIZE
from .world import PlacementFailure, generate_scenario

DEFAULT_COUNTS = (6, 8, 9, 12, 16, 20, 30, 49, 64)

COLUMNS = (
    "objects", "rep", "robot", "seed", "success", "d", "tp_time", "mp_time",
    "mp_attempts", "executions", "rearranged", "nodes_visited", "violations", "error",
)
_INT = {"objects", "rep", "seed", "d", "mp_attempts", "executions", "rearranged", "nodes_visited", "violations"}
_FLOAT = {"tp_time", "mp_time"}


@dataclass(frozen=True)
class BenchmarkSpec:
    object_counts: tuple[int, ...] = DEFAULT_COUNTS
    repetitions: int = 3
    robots: int = 2
    targets: int = 2
    base_seed: int = 0
    config: ExecutorConfig = field(default_factory=ExecutorConfig)
    validate: bool = True

    def __post_init__(self):
        counts = tuple(int(c) for c in self.object_counts)
        object.__setattr__(self, "object_counts", counts)
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if list(counts) != sorted(counts) or not counts:
            raise ValueError("object_counts must be a non-empty ascending list")
        if not self.targets >= self.robots >= 1:
            raise ValueError("need targets >= robots >= 1")


def run_seeds(base: int, count: int, rep: int) -> dict[str, int]:
    """Independent 32-bit seeds for one (count, repetition) cell."""
    s = np.random.SeedSequence([base, count, rep]).generate_state(4)
    return {"scenario": int(s[0]), "allocation": int(s[1]), "motion": int(s[2]), "failure": int(s[3])}


@dataclass
class MetricsTable:
    rows: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def successful(self) -> list[dict]:
        return [r for r in self.rows if r["success"]]

    def failures(self) -> list[dict]:
        return [r for r in self.rows if not r["success"]]

    def runs(self) -> dict[tuple[int, int], list[dict]]:
        out: dict[tuple[int, int], list[dict]] = {}
        for r in self.rows:
            out.setdefault((r["objects"], r["rep"]), []).append(r)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (int(r[k]) if k == "success" else r[k]) for k in COLUMNS})

    @classmethod
    def from_csv(cls, path) -> "MetricsTable":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != COLUMNS:
                raise ValueError(f"unexpected CSV header {reader.fieldnames}")
            rows = []
            for raw in reader:
                row: dict = {}
                for k, v in raw.items():
                    if k in _INT:
                        row[k] = int(v)
                    elif k in _FLOAT:
                        row[k] = float(v)
                    elif k == "success":
                        row[k] = v == "1"
                    else:
                        row[k] = v
                rows.append(row)
        return cls(rows)


def bench_one(spec: BenchmarkSpec, count: int, rep: int) -> list[dict]:
    """Rows for a single (count, repetition) run; failures become rows too."""
    seeds = run_seeds(spec.base_seed, count, rep)
    robots = [f"r{i + 1}" for i in range(spec.robots)]

    def failed(error: str) -> list[dict]:
        return [
            dict(objects=count, rep=rep, robot=r, seed=seeds["scenario"], success=False, d=0, tp_time=0.0,
                 mp_time=0.0, mp_attempts=0, executions=0, rearranged=0, nodes_visited=0, violations=0, error=error)
            for r in robots
        ]

    try:
        world = generate_scenario(count, spec.targets, spec.robots, seeds["scenario"])
    except PlacementFailure as exc:
        return failed(f"generation: {exc}")
    config = replace(spec.config, seeds={k: seeds[k] for k in ("allocation", "motion", "failure")})
    try:
        report = run(world, config)
    except Exception as exc:  # keep the sweep alive, record the cause
        return failed(f"{type(exc).__name__}: {exc}")
    violations = len(validate_trace(world, report.trace, expect_success=report.success)) if spec.validate else 0
    rows = []
    for row in report.rows():
        rows.append(dict(objects=count, rep=rep, seed=seeds["scenario"], success=report.success,
                         violations=violations, error="", **row))
    return rows


def bench(spec: BenchmarkSpec | None = None, progress=None) -> MetricsTable:
    """Run every (count, repetition) cell of the sweep in order."""
    spec = BenchmarkSpec() if spec is None else spec
    table = MetricsTable()
    for count in spec.object_counts:
        for rep in range(spec.repetitions):
            t0 = time.perf_counter()
            rows = bench_one(spec, count, rep)
            table.rows.extend(rows)
            if progress is not None:
                progress(count, rep, rows, time.perf_counter() - t0)
    return table


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def rankdata(values: Sequence[float]) -> list[float]:
    """1-based ranks, ties sharing their average rank."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    if n != len(y) or n < 2:
        raise ValueError("need two equally long sequences of length >= 2")
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return math.nan
    return sxy / math.sqrt(sxx * syy)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    return pearson(rankdata(x), rankdata(y))


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float
    n: int


def linear_fit(x: Sequence[float], y: Sequence[float]) -> LinearFit:
    """Ordinary least squares ``y = slope * x + intercept``."""
    n = len(x)
    if n != len(y) or n < 2:
        raise ValueError("need at least two points")
    mx, my = sum(x) / n, sum(y) / n
    sxx = sum((a - mx) ** 2 for a in x)
    if sxx == 0:
        raise ValueError("x is constant")
    slope = sum((a - mx) * (b - my) for a, b in zip(x, y)) / sxx
    intercept = my - slope * mx
    ss_res = sum((b - (slope * a + intercept)) ** 2 for a, b in zip(x, y))
    ss_tot = sum((b - my) ** 2 for b in y)
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return LinearFit(slope, intercept, r2, n)


@dataclass
class Summary:
    per_depth: dict[int, dict[str, float]]
    mean_d: dict[int, float]
    spearman_rho: float
    fit: LinearFit | None
    bound_violations: list[dict]
    success_rate: float
    failures: list[tuple[int, int]]


def aggregate(table: MetricsTable, template_size: int = TEMPLATE_SIZE) -> Summary:
    """Per-depth totals, per-count mean depth, rank correlation, O(nd) checks.

    Means use successful runs only; failed runs are listed separately.
    """
    if not table.rows:
        raise ValueError("empty table")
    ok = table.successful()
    per_depth: dict[int, dict[str, float]] = {}
    for r in ok:
        slot = per_depth.setdefault(r["d"], {"rows": 0, "nodes_visited": 0, "mp_attempts": 0, "mp_time": 0.0})
        slot["rows"] += 1
        slot["nodes_visited"] += r["nodes_visited"]
        slot["mp_attempts"] += r["mp_attempts"]
        slot["mp_time"] += r["mp_time"]
    by_count: dict[int, list[int]] = {}
    for (count, _), rows in table.runs().items():
        if all(r["success"] for r in rows):
            by_count.setdefault(count, []).append(sum(r["d"] for r in rows) / len(rows))
    mean_d = {c: sum(v) / len(v) for c, v in sorted(by_count.items())}
    rho = spearman(list(mean_d), list(mean_d.values())) if len(mean_d) >= 2 else math.nan
    fit = None
    if len({r["d"] for r in ok}) >= 2:
        fit = linear_fit([r["d"] for r in ok], [r["nodes_visited"] for r in ok])
    bound = [r for r in table.rows if r["nodes_visited"] > template_size * r["d"]]
    runs = table.runs()
    failures = sorted(k for k, rows in runs.items() if not all(r["success"] for r in rows))
    return Summary(
        dict(sorted(per_depth.items())), mean_d, rho, fit, bound,
        1.0 - len(failures) / len(runs), failures,
    )


def format_summary(summary: Summary) -> str:
    lines = ["objects  mean_d"]
    lines += [f"{c:7d}  {d:6.2f}" for c, d in summary.mean_d.items()]
    lines.append(f"spearman(objects, mean d) = {summary.spearman_rho:.3f}")
    if summary.fit is not None:
        f = summary.fit
        lines.append(f"nodes_visited ~ {f.slope:.3f} d + {f.intercept:.3f}  (R^2 = {f.r2:.4f}, n = {f.n})")
    lines.append(f"rows above the n*d bound: {len(summary.bound_violations)}")
    lines.append(f"run success rate: {summary.success_rate:.1%}")
    lines.append("d  rows  nodes  mp_attempts  mp_time")
    for d, s in summary.per_depth.items():
        lines.append(f"{d}  {s['rows']}  {s['nodes_visited']}  {s['mp_attempts']}  {s['mp_time']:.2f}")
    return "\n".join(lines)


def paired_depths(
    counts: Iterable[int], seeds: Iterable[int], probabilities: Sequence[float], *, robots: int = 2,
    targets: int = 2, retry_budget: int = 20,
) -> dict[float, list[float]]:
    """Mean depth per run for each failure probability on identical scenes."""
    out: dict[float, list[float]] = {p: [] for p in probabilities}
    for count in counts:
        for seed in seeds:
            s = run_seeds(seed, count, 0)
            world = generate_scenario(count, targets, robots, s["scenario"])
            for p in probabilities:
                cfg = ExecutorConfig(
                    failure_probability=p, retry_budget=retry_budget,
                    seeds={k: s[k] for k in ("allocation", "motion", "failure")},
                )
                rep = run(world, cfg)
                out[p].append(sum(m.depth for m in rep.robots.values()) / robots)
    return out
