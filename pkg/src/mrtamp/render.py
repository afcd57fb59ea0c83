"""Top-down SVG pictures of a workspace, optionally with overlays."""
from __future__ import annotations

from typing import Iterable
from xml.sax.saxutils import quoteattr

from .world import Kind, Status, WorkspaceModel

SCALE = 500.0  # pixels per metre

_FILL = {Kind.TARGET: "#d62728", Kind.CLUTTER: "#7f7f7f"}
_ROBOT_COLORS = ("#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2")


def _f(v: float) -> str:
    return f"{v:.2f}"


def render_svg(
    world: WorkspaceModel,
    *,
    triangles: Iterable = (),
    trace: Iterable[dict] = (),
    paths: Iterable[Iterable[tuple[float, float]]] = (),
) -> str:
    """SVG markup for ``world``.

    ``triangles`` are selection triangles (their selected objects get a
    highlight ring), ``trace`` contributes the waypoints of every motion event
    and ``paths`` adds arbitrary polylines. Output is byte-stable.
    """
    b = world.bounds
    width, height = b.w * SCALE, b.h * SCALE

    def px(x: float, y: float) -> tuple[str, str]:
        return _f((x - b.x) * SCALE), _f((b.y1 - y) * SCALE)

    colors = {r.id: _ROBOT_COLORS[i % len(_ROBOT_COLORS)] for i, r in enumerate(world.robots)}
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}">',
        f'<rect class="background" x="0" y="0" width="{_f(width)}" height="{_f(height)}" fill="#ffffff"/>',
    ]
    t = world.table
    x, y = px(t.x, t.y1)
    out.append(f'<rect class="table" x="{x}" y="{y}" width="{_f(t.w * SCALE)}" height="{_f(t.h * SCALE)}" '
               'fill="#f3e9d2" stroke="#8b6d3f"/>')
    for s in world.safe_regions:
        x, y = px(s.rect.x, s.rect.y1)
        out.append(
            f'<rect class="safe-region" data-owner={quoteattr(s.owner)} x="{x}" y="{y}" '
            f'width="{_f(s.rect.w * SCALE)}" height="{_f(s.rect.h * SCALE)}" fill="#e8f4e8" '
            f'stroke="{colors.get(s.owner, "#555555")}" stroke-dasharray="4 2"/>'
        )
    selected = set()
    for tri in triangles:
        pts = " ".join(",".join(px(*v)) for v in tri.vertices)
        out.append(
            f'<polygon class="selection-triangle" data-robot={quoteattr(tri.robot)} data-target={quoteattr(tri.target)} '
            f'points="{pts}" fill="{colors.get(tri.robot, "#555555")}" fill-opacity="0.15" '
            f'stroke="{colors.get(tri.robot, "#555555")}" stroke-width="{_f(tri.inflation * SCALE * 2)}" '
            'stroke-opacity="0.15" stroke-linejoin="round"/>'
        )
        selected |= set(tri.selected)
    for o in world.objects:
        if o.status in (Status.RETRIEVED, Status.GRASPED):
            continue
        cx, cy = px(*o.center)
        cls = f"object {o.kind.value}" + (" selected" if o.id in selected else "")
        stroke = ' stroke="#000000" stroke-width="2"' if o.id in selected else ""
        out.append(
            f'<circle class="{cls}" id={quoteattr(o.id)} cx="{cx}" cy="{cy}" r="{_f(o.radius * SCALE)}" '
            f'fill="{_FILL[o.kind]}"{stroke}/>'
        )
    polylines = [list(p) for p in paths]
    for ev in trace:
        if ev.get("kind") == "motion":
            polylines.append([(w[0], w[1]) for w in ev["waypoints"]])
    for line in polylines:
        pts = " ".join(",".join(px(*p)) for p in line)
        out.append(f'<polyline class="path" points="{pts}" fill="none" stroke="#333333" stroke-width="1"/>')
    for r in world.robots:
        bx, by = px(*r.base)
        hx, hy = px(*r.home.xy)
        out.append(
            f'<rect class="robot-base" id={quoteattr(r.id)} x="{_f(float(bx) - 8)}" y="{_f(float(by) - 8)}" '
            f'width="16" height="16" fill="{colors[r.id]}"/>'
        )
        out.append(
            f'<circle class="robot-home" data-robot={quoteattr(r.id)} cx="{hx}" cy="{hy}" '
            f'r="{_f(r.ee_radius * SCALE)}" fill="none" stroke="{colors[r.id]}"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render(world: WorkspaceModel, path, **overlays) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_svg(world, **overlays))
