"""Multi-robot target retrieval in tabletop clutter.

Obstacle selection, utility-based task allocation, growing AND/OR graph
networks for task planning, and a planar motion layer, tied together by a
turn-based executor and a benchmark harness.
"""
from .allocation import allocate, brute_force_allocate, corrected_count, utility
from .executor import ExecutorConfig, run, validate_trace
from .harness import BenchmarkSpec, aggregate, bench
from .selection import select_obstacles
from .world import WorkspaceModel, generate_scenario, load_scenario, save_scenario

__all__ = [
    "BenchmarkSpec", "ExecutorConfig", "WorkspaceModel", "aggregate", "allocate", "bench",
    "brute_force_allocate", "corrected_count", "generate_scenario", "load_scenario", "run",
    "save_scenario", "select_obstacles", "utility", "validate_trace",
]

__version__ = "0.1.0"
