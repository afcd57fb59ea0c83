"""Small planar geometry kernel shared by selection and motion."""
from __future__ import annotations

import math

import numpy as np

# Closed free-space convention: touching discs do not collide. The slack only
# absorbs round-off in positions that were computed, not sampled.
CONTACT_TOL = 1e-9


def unit(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    return math.atan2(math.sin(angle), math.cos(angle))


def point_segment_distance(points, a, b) -> np.ndarray:
    """Euclidean distance from each row of ``points`` to the segment ab."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(p - a, axis=1)
    t = np.clip((p - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(p - proj, axis=1)


def point_ray_distance(points, origin, direction) -> np.ndarray:
    """Distance from points to the half-line ``origin + s*direction``, s >= 0."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    o = np.asarray(origin, dtype=float)
    u = np.asarray(direction, dtype=float)
    s = np.maximum((p - o) @ u, 0.0)
    return np.linalg.norm(p - (o + s[:, None] * u), axis=1)


def _cross(o, a, p) -> np.ndarray:
    return (a[0] - o[0]) * (p[:, 1] - o[1]) - (a[1] - o[1]) * (p[:, 0] - o[0])


def point_triangle_distance(points, tri) -> np.ndarray:
    """Distance from points to a (possibly degenerate) filled triangle.

    Zero for points inside or on the boundary. Collinear vertices are treated
    as the segment hull, so zero-area triangles behave like line segments.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    a, b, c = (np.asarray(v, dtype=float) for v in tri)
    edge = np.minimum.reduce(
        [
            point_segment_distance(p, a, b),
            point_segment_distance(p, b, c),
            point_segment_distance(p, c, a),
        ]
    )
    area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if abs(area2) < 1e-15:
        return edge
    d1, d2, d3 = _cross(a, b, p), _cross(b, c, p), _cross(c, a, p)
    inside = ((d1 >= 0) & (d2 >= 0) & (d3 >= 0)) | ((d1 <= 0) & (d2 <= 0) & (d3 <= 0))
    return np.where(inside, 0.0, edge)


def discs_clear(centers, radii, obstacles) -> np.ndarray:
    """For each query disc, True when it overlaps none of ``obstacles``.

    ``obstacles`` is an (m, 3) array of ``x, y, r`` rows.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),))
    obstacles = np.asarray(obstacles, dtype=float).reshape(-1, 3)
    if len(obstacles) == 0:
        return np.ones(len(centers), dtype=bool)
    diff = centers[:, None, :] - obstacles[None, :, :2]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    reach = radii[:, None] + obstacles[None, :, 2]
    return np.all(dist >= reach - CONTACT_TOL, axis=1)
