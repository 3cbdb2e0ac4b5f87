"""Point-to-triangle distances and inside/outside tests for closed meshes."""
from __future__ import annotations

import numpy as np

from .bvh import Bvh


def closest_point_triangles(p, a, b, c) -> np.ndarray:
    """Closest point on each triangle ``(a, b, c)`` to the matching point ``p``.

    All inputs are ``(n, 3)`` and broadcast against each other. Uses the
    Voronoi-region case analysis on barycentric coordinates.
    """
    p, a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (p, a, b, c)))
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def put(mask, value):
        m = mask & ~done
        out[m] = value[m] if np.ndim(value) == 2 else value
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        put((d1 <= 0) & (d2 <= 0), a)
        put((d3 >= 0) & (d4 <= d3), b)
        put((d6 >= 0) & (d5 <= d6), c)
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v, w = vb * denom, vc * denom
        put(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return out


def point_mesh_distance(points, bvh: Bvh, search_radius: float) -> np.ndarray:
    """Unsigned distance from each point to the mesh surface.

    Only triangles within ``search_radius`` of a point are examined; points
    farther than that from every triangle get ``inf``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    corners = bvh.mesh.corners
    out = np.full(len(points), np.inf)
    for i, p in enumerate(points):
        cand = bvh.query_box(p - search_radius, p + search_radius)
        if len(cand) == 0:
            continue
        tri = corners[cand]
        q = closest_point_triangles(np.broadcast_to(p, (len(cand), 3)), tri[:, 0], tri[:, 1], tri[:, 2])
        out[i] = np.sqrt(((q - p) ** 2).sum(axis=1).min())
    return out


# generic directions, so probe rays almost surely miss mesh edges and vertices
_PROBES = np.array([[0.2672612419124244, 0.5345224838248488, 0.8017837257372732],
                    [-0.6246950475544243, 0.7808688094430304, -0.0124939009510885],
                    [0.3511234415883917, -0.2106740649530350, -0.9123105625617661]])
_PROBES /= np.linalg.norm(_PROBES, axis=1, keepdims=True)


def inside_closed_mesh(points, bvh: Bvh) -> np.ndarray:
    """Crossing-parity inside test, majority vote over three probe directions."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    votes = np.zeros(len(points), dtype=np.int64)
    for d in _PROBES:
        votes += bvh.count_crossings(points, d[None]) % 2
    return votes >= 2
