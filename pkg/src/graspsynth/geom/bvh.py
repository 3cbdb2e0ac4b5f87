"""Axis-aligned bounding volume hierarchy over a triangle mesh, with numba kernels
for batched ray casting and box overlap queries."""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .mesh import TriangleMesh

LEAF_SIZE = 4
_STACK = 128


class Bvh:
    """Immutable BVH. Queries are read-only and safe to share between threads."""

    def __init__(self, mesh: TriangleMesh, leaf_size: int = LEAF_SIZE):
        self.mesh = mesh
        corners = mesh.corners
        tri_lo = corners.min(axis=1)
        tri_hi = corners.max(axis=1)
        cent = 0.5 * (tri_lo + tri_hi)
        n_tri = len(corners)
        order = np.arange(n_tri)
        lo, hi, left, right, start, count = [], [], [], [], [], []
        # (node index, begin, end) work list; children are appended after their parent
        work = [(0, 0, n_tri)]
        lo.append(None), hi.append(None), left.append(-1), right.append(-1), start.append(0), count.append(0)
        while work:
            node, b, e = work.pop()
            idx = order[b:e]
            lo[node] = tri_lo[idx].min(axis=0)
            hi[node] = tri_hi[idx].max(axis=0)
            if e - b <= leaf_size:
                start[node], count[node] = b, e - b
                continue
            c = cent[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            mid = (e - b) // 2
            part = np.argsort(c[:, axis], kind="stable")
            order[b:e] = idx[part]
            for child in range(2):
                lo.append(None), hi.append(None), left.append(-1), right.append(-1), start.append(0), count.append(0)
            l_id, r_id = len(lo) - 2, len(lo) - 1
            left[node], right[node] = l_id, r_id
            work.append((r_id, b + mid, e))
            work.append((l_id, b, b + mid))
        self.node_lo = np.ascontiguousarray(lo, dtype=np.float64) - 1e-9  # padding absorbs slab-test rounding
        self.node_hi = np.ascontiguousarray(hi, dtype=np.float64) + 1e-9
        self.node_left = np.asarray(left, dtype=np.int64)
        self.node_right = np.asarray(right, dtype=np.int64)
        self.node_start = np.asarray(start, dtype=np.int64)
        self.node_count = np.asarray(count, dtype=np.int64)
        self.order = order.astype(np.int64)
        self.v0 = np.ascontiguousarray(corners[:, 0])
        self.e1 = np.ascontiguousarray(corners[:, 1] - corners[:, 0])
        self.e2 = np.ascontiguousarray(corners[:, 2] - corners[:, 0])
        self.tri_lo = np.ascontiguousarray(tri_lo)
        self.tri_hi = np.ascontiguousarray(tri_hi)

    def __len__(self):
        return len(self.node_lo)

    def _arrays(self):
        return (self.node_lo, self.node_hi, self.node_left, self.node_right, self.node_start,
                self.node_count, self.order, self.v0, self.e1, self.e2)

    # -- ray queries ----------------------------------------------------------------

    def intersect(self, origins, directions, t_min=0.0, t_max=np.inf, farthest=False):
        """Batched ray casting.

        Returns ``(t, triangle_id)`` arrays; misses have ``t = inf`` and id ``-1``.
        ``farthest=True`` returns the last intersection in ``(t_min, t_max]`` instead
        of the first.
        """
        o = np.ascontiguousarray(np.asarray(origins, dtype=np.float64).reshape(-1, 3))
        d = np.ascontiguousarray(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
        if len(o) == 1 and len(d) > 1:
            o = np.ascontiguousarray(np.broadcast_to(o, d.shape))
        tmin = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (len(o),)).copy()
        tmax = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (len(o),)).copy()
        return _cast(*self._arrays(), o, d, tmin, tmax, bool(farthest))

    def count_crossings(self, origins, directions, t_max=np.inf):
        """Number of triangle crossings along each ray (for inside/outside parity)."""
        o = np.ascontiguousarray(np.asarray(origins, dtype=np.float64).reshape(-1, 3))
        d = np.ascontiguousarray(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
        if len(d) == 1 and len(o) > 1:
            d = np.ascontiguousarray(np.broadcast_to(d, o.shape))
        tmax = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (len(o),)).copy()
        return _count(*self._arrays(), o, d, tmax)

    def query_box(self, lo, hi) -> np.ndarray:
        """Indices of triangles whose bounding boxes overlap the box [lo, hi]."""
        out = np.empty(len(self.order), dtype=np.int64)
        n = _box_query(self.node_lo, self.node_hi, self.node_left, self.node_right, self.node_start,
                       self.node_count, self.order, self.tri_lo, self.tri_hi,
                       np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64), out)
        return np.sort(out[:n])


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    normal: np.ndarray
    triangle_id: int


def raycast(bvh: Bvh, origin, direction, t_min: float = 0.0, t_max: float = np.inf) -> Hit | None:
    """Nearest intersection with ``t`` in ``(t_min, t_max]``, or ``None``."""
    if t_min < 0 or not t_max > t_min:
        raise ValueError("need 0 <= t_min < t_max")
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    t, tri = bvh.intersect(origin[None], direction[None], t_min, t_max)
    if tri[0] < 0:
        return None
    return Hit(float(t[0]), origin + t[0] * direction, bvh.mesh.normals[tri[0]].copy(), int(tri[0]))


@nb.njit(cache=True, inline="always")
def _tri_hit(o, d, v0, e1, e2, k):
    px = d[1] * e2[k, 2] - d[2] * e2[k, 1]
    py = d[2] * e2[k, 0] - d[0] * e2[k, 2]
    pz = d[0] * e2[k, 1] - d[1] * e2[k, 0]
    det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
    if det == 0.0:
        return np.inf
    inv = 1.0 / det
    sx = o[0] - v0[k, 0]
    sy = o[1] - v0[k, 1]
    sz = o[2] - v0[k, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = sy * e1[k, 2] - sz * e1[k, 1]
    qy = sz * e1[k, 0] - sx * e1[k, 2]
    qz = sx * e1[k, 1] - sy * e1[k, 0]
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    return (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * inv


@nb.njit(cache=True, inline="always")
def _slab(o, inv, lo, hi, n, t0, t1):
    tn = t0
    tf = t1
    for a in range(3):
        ta = (lo[n, a] - o[a]) * inv[a]
        tb = (hi[n, a] - o[a]) * inv[a]
        if ta > tb:
            ta, tb = tb, ta
        if ta > tn:
            tn = ta
        if tb < tf:
            tf = tb
    return tn <= tf


@nb.njit(cache=True)
def _cast(lo, hi, left, right, start, count, order, v0, e1, e2, origins, dirs, tmins, tmaxs, farthest):
    n_ray = origins.shape[0]
    t_out = np.full(n_ray, np.inf)
    id_out = np.full(n_ray, -1, dtype=np.int64)
    stack = np.empty(_STACK, dtype=np.int64)
    inv = np.empty(3)
    for r in range(n_ray):
        o = origins[r]
        d = dirs[r]
        for a in range(3):
            da = d[a]
            if abs(da) < 1e-300:
                da = 1e-300
            inv[a] = 1.0 / da
        tmin = tmins[r]
        best = tmaxs[r]
        best_far = -np.inf
        best_id = -1
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            n = stack[sp]
            upper = tmaxs[r] if farthest else best
            if not _slab(o, inv, lo, hi, n, tmin, upper):
                continue
            if count[n] > 0:
                for i in range(start[n], start[n] + count[n]):
                    k = order[i]
                    t = _tri_hit(o, d, v0, e1, e2, k)
                    if t > tmin and t <= tmaxs[r] and t < np.inf:
                        if farthest:
                            if t > best_far or (t == best_far and k < best_id):
                                best_far = t
                                best_id = k
                        elif t < best or (t == best and (best_id < 0 or k < best_id)):
                            best = t
                            best_id = k
            else:
                stack[sp] = left[n]
                stack[sp + 1] = right[n]
                sp += 2
        if best_id >= 0:
            t_out[r] = best_far if farthest else best
            id_out[r] = best_id
    return t_out, id_out


@nb.njit(cache=True)
def _count(lo, hi, left, right, start, count, order, v0, e1, e2, origins, dirs, tmaxs):
    n_ray = origins.shape[0]
    out = np.zeros(n_ray, dtype=np.int64)
    stack = np.empty(_STACK, dtype=np.int64)
    inv = np.empty(3)
    for r in range(n_ray):
        o = origins[r]
        d = dirs[r]
        for a in range(3):
            da = d[a]
            if abs(da) < 1e-300:
                da = 1e-300
            inv[a] = 1.0 / da
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            n = stack[sp]
            if not _slab(o, inv, lo, hi, n, 0.0, tmaxs[r]):
                continue
            if count[n] > 0:
                for i in range(start[n], start[n] + count[n]):
                    t = _tri_hit(o, d, v0, e1, e2, order[i])
                    if t > 0.0 and t <= tmaxs[r] and t < np.inf:
                        out[r] += 1
            else:
                stack[sp] = left[n]
                stack[sp + 1] = right[n]
                sp += 2
    return out


@nb.njit(cache=True)
def _box_query(lo, hi, left, right, start, count, order, tri_lo, tri_hi, qlo, qhi, out):
    stack = np.empty(_STACK, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    m = 0
    while sp > 0:
        sp -= 1
        n = stack[sp]
        miss = False
        for a in range(3):
            if lo[n, a] > qhi[a] or hi[n, a] < qlo[a]:
                miss = True
        if miss:
            continue
        if count[n] > 0:
            for i in range(start[n], start[n] + count[n]):
                k = order[i]
                ok = True
                for a in range(3):
                    if tri_lo[k, a] > qhi[a] or tri_hi[k, a] < qlo[a]:
                        ok = False
                if ok:
                    out[m] = k
                    m += 1
        else:
            stack[sp] = left[n]
            stack[sp + 1] = right[n]
            sp += 2
    return m
