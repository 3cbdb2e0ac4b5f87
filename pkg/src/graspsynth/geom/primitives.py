"""Procedural closed meshes used for built-in object libraries, bins and tests."""
from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh, merge_meshes

_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],  # -z
    [4, 5, 6], [4, 6, 7],  # +z
    [0, 1, 5], [0, 5, 4],  # -y
    [3, 7, 6], [3, 6, 2],  # +y
    [0, 4, 7], [0, 7, 3],  # -x
    [1, 2, 6], [1, 6, 5],  # +x
])


def box(extents, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with 8 vertices and 12 outward-wound triangles."""
    hx, hy, hz = 0.5 * np.asarray(extents, dtype=np.float64)
    v = np.array([
        [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
        [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
    ]) + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, _BOX_FACES)


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.array(faces))


def ellipsoid(radii, subdivisions: int = 3) -> TriangleMesh:
    s = icosphere(1.0, subdivisions)
    return TriangleMesh(s.vertices * np.asarray(radii, dtype=np.float64), s.triangles)


def cylinder(radius: float, height: float, sections: int = 24, top_radius: float | None = None) -> TriangleMesh:
    """Closed (optionally tapered) cylinder along z, centered at the origin."""
    top_radius = radius if top_radius is None else top_radius
    ang = 2 * np.pi * np.arange(sections) / sections
    ring = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    h = 0.5 * height
    bottom = np.column_stack([ring * radius, np.full(sections, -h)])
    top = np.column_stack([ring * top_radius, np.full(sections, h)])
    v = np.vstack([bottom, top, [[0, 0, -h], [0, 0, h]]])
    cb, ct = 2 * sections, 2 * sections + 1
    faces = []
    for i in range(sections):
        j = (i + 1) % sections
        faces += [(i, j, sections + j), (i, sections + j, sections + i)]
        faces += [(cb, j, i), (ct, sections + i, sections + j)]
    return TriangleMesh(v, np.array(faces))


def bin_mesh(extents, wall: float) -> TriangleMesh:
    """Open-top tray: floor top at z = 0, interior ``[-L/2, L/2] x [-W/2, W/2] x [0, H]``.

    Built as five closed slabs so the union is closed.
    """
    L, W, H = (float(x) for x in extents)
    t = float(wall)
    parts = [
        box((L + 2 * t, W + 2 * t, t), (0, 0, -t / 2)),
        box((t, W + 2 * t, H), (-(L + t) / 2, 0, H / 2)),
        box((t, W + 2 * t, H), ((L + t) / 2, 0, H / 2)),
        box((L, t, H), (0, -(W + t) / 2, H / 2)),
        box((L, t, H), (0, (W + t) / 2, H / 2)),
    ]
    mesh, _ = merge_meshes(parts)
    return mesh
