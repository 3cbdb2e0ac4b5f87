"""Shared constructors and independent reference implementations for tests."""
import numpy as np

from graspsynth.grasp import Grasp


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def random_grasp(rng, quality=None, spread=0.05, width_max=0.04):
    """Valid grasp with random center, orientation and width."""
    r = unit(rng.normal(size=3))
    n = rng.normal(size=3)
    n = unit(n - (n @ r) * r)
    w = rng.uniform(0.005, width_max)
    sep = rng.uniform(0.5, 1.0) * (w - 0.001)
    o = rng.uniform(-spread, spread, 3)
    q = rng.uniform(0.0, 1.0) if quality is None else quality
    g = Grasp.from_contacts(o - 0.5 * sep * r, o + 0.5 * sep * r, n, w, q)
    return g


def reference_distance(g1, g2, b=(1.0, 0.03, 0.03)):
    """Direct scalar evaluation of the weighted grasp distance."""
    m1 = [(g1.c1[i] + g1.c2[i]) / 2 for i in range(3)]
    m2 = [(g2.c1[i] + g2.c2[i]) / 2 for i in range(3)]
    d = sum((m1[i] - m2[i]) ** 2 for i in range(3)) ** 0.5
    rr = abs(sum(g1.closing[i] * g2.closing[i] for i in range(3)))
    nn = sum(g1.approach[i] * g2.approach[i] for i in range(3))
    return b[0] * d + b[1] * np.arccos(min(1.0, rr)) / np.pi + b[2] * np.arccos(max(-1.0, min(1.0, nn))) / np.pi


def reference_nms(grasps, threshold, dist=reference_distance):
    """Quadratic greedy suppression over a full distance matrix."""
    n = len(grasps)
    D = np.array([[dist(a, b) for b in grasps] for a in grasps]).reshape(n, n)
    order = sorted(range(n), key=lambda i: (-grasps[i].quality, i))
    removed = [False] * n
    keep = []
    for i in order:
        if removed[i]:
            continue
        keep.append(i)
        for j in range(n):
            if D[i, j] <= threshold:
                removed[j] = True
    return keep


def convex_penetration(meshes, samples=2000, seed=0):
    """Max depth of any surface point of one mesh inside another, for convex meshes.

    The depth of a point inside a convex body is its smallest distance to the
    facet planes from qhull, which is exact; surface points are the vertices
    plus uniform area-weighted samples.
    """
    from scipy.spatial import ConvexHull

    rng = np.random.default_rng(seed)
    hulls = [ConvexHull(m.vertices) for m in meshes]
    worst = 0.0
    for a, mesh in enumerate(meshes):
        tri = mesh.vertices[mesh.triangles]
        area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        pick = rng.choice(len(tri), samples, p=area / area.sum())
        u, v = rng.random((2, samples))
        flip = u + v > 1
        u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
        t = tri[pick]
        pts = np.vstack([mesh.vertices, t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])])
        for b, hull in enumerate(hulls):
            if a == b:
                continue
            signed = pts @ hull.equations[:, :3].T + hull.equations[:, 3]
            depth = -signed.max(axis=1)  # positive inside
            worst = max(worst, float(depth.max()))
    return worst


def reference_labels(cloud, grasps, pos_pts, pos_ref, neg_pts, neg_ref, radius):
    """Exhaustive per-point scan of all contacts; returns (mask, quality, grasp_ref).

    Winner: highest Q, then positive over negative, then lowest grasp index
    (contacts without a grasp last), then the earliest contact.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    contacts = [(p, r, True) for p, r in zip(pos_pts, pos_ref)] + [(p, r, False) for p, r in zip(neg_pts, neg_ref)]
    n = len(cloud)
    mask = np.full(n, 2, dtype=np.int8)
    quality = np.zeros(n)
    ref = np.full(n, -1)
    for i in range(n):
        best = None
        for k, (p, r, pos) in enumerate(contacts):
            if np.sqrt(((cloud[i] - p) ** 2).sum()) <= radius:
                q = grasps[r].quality if pos else 0.0
                key = (-q, 0 if pos else 1, r if r >= 0 else float("inf"), k)
                if best is None or key < best[0]:
                    best = (key, q, r, pos)
        if best is not None:
            _, quality[i], ref[i], pos = best
            mask[i] = 1 if pos else 0
    return mask, quality, ref


def bin_boxes(bin_model):
    """Floor and wall solids of an open tray as axis-aligned (lo, hi) boxes."""
    L, W, H = bin_model.extents
    t = bin_model.wall
    return [
        (np.array([-L / 2 - t, -W / 2 - t, -t]), np.array([L / 2 + t, W / 2 + t, 0.0])),
        (np.array([-L / 2 - t, -W / 2 - t, 0.0]), np.array([-L / 2, W / 2 + t, H])),
        (np.array([L / 2, -W / 2 - t, 0.0]), np.array([L / 2 + t, W / 2 + t, H])),
        (np.array([-L / 2 - t, -W / 2 - t, 0.0]), np.array([L / 2 + t, -W / 2, H])),
        (np.array([-L / 2 - t, W / 2, 0.0]), np.array([L / 2 + t, W / 2 + t, H])),
    ]


def _box_planes(lo, hi):
    eye = np.eye(3)
    return np.vstack([np.c_[eye, -hi], np.c_[-eye, lo]])


def surface_error(geo, points, owner):
    """Distance of rendered points from the surface of the (convex) instance or
    bin solid that produced them."""
    from scipy.spatial import ConvexHull

    err = np.zeros(len(points))
    sel = owner == -1
    if sel.any():
        p = points[sel]
        d = np.full(len(p), np.inf)
        for lo, hi in bin_boxes(geo.scene.bin):
            d = np.minimum(d, np.linalg.norm(np.maximum(np.maximum(lo - p, p - hi), 0.0), axis=1))
        err[sel] = d
    for i, mesh in enumerate(geo.instance_meshes):
        sel = owner == i
        if sel.any():
            eq = ConvexHull(mesh.vertices).equations
            err[sel] = np.abs((points[sel] @ eq[:, :3].T + eq[:, 3]).max(axis=1))
    if (owner < -1).any():
        err[owner < -1] = np.inf
    return err


def segment_blocked(origin, points, planes, shrink=1e-6, depth=1e-9):
    """True where the segment origin -> point (stopped ``shrink`` meters short)
    passes through the convex solid ``{x : planes[:, :3] x + planes[:, 3] <= 0}``
    by more than ``depth`` along the segment."""
    v = points - origin
    length = np.linalg.norm(v, axis=1)
    t_max = 1.0 - shrink / length
    a = planes[:, :3] @ origin + planes[:, 3]  # (F,)
    b = v @ planes[:, :3].T  # (N, F)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -a / b
    lower = np.where(b < 0, t, -np.inf).max(axis=1)
    upper = np.where(b > 0, t, np.inf).min(axis=1)
    parallel_out = ((b == 0) & (a > 0)).any(axis=1)
    lo = np.maximum(lower, 0.0)
    hi = np.minimum(upper, t_max)
    return ~parallel_out & ((hi - lo) * length > depth)


def occluded_points(geo, origin, points, project_uv):
    """Rendered points with another solid between them and the camera.

    Convex hulls of the instances and the bin boxes are clipped against every
    camera-to-point segment; only points whose pixel falls inside a solid's
    projected bounding rectangle are tested against it.
    """
    from scipy.spatial import ConvexHull

    solids = [ConvexHull(m.vertices).equations for m in geo.instance_meshes]
    corners = [m.vertices for m in geo.instance_meshes]
    for lo, hi in bin_boxes(geo.scene.bin):
        solids.append(_box_planes(lo, hi))
        corners.append(np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]))
    uv = project_uv(points)[:, :2]
    blocked = np.zeros(len(points), dtype=bool)
    for planes, verts in zip(solids, corners):
        c = project_uv(verts)[:, :2]
        near = np.all((uv >= c.min(axis=0) - 1) & (uv <= c.max(axis=0) + 1), axis=1)
        idx = np.flatnonzero(near & ~blocked)
        if len(idx):
            blocked[idx] = segment_blocked(origin, points[idx], planes)
    return blocked
