"""Contact wrenches and the Ferrari-Canny grasp quality.

Q is the radius of the largest origin-centered ball inside the convex hull of
the contact wrenches, i.e. the minimum over unit directions d of the support
function h(d) = max_j d . w_j.

The default ``hull`` backend builds the hull with qhull and takes the smallest
facet offset, which is exact. The ``directions`` backend (also the fallback
when qhull rejects a nearly degenerate set) evaluates it as

1. an LP feasibility test: the origin must be a strictly positive convex
   combination of the wrenches and the wrenches must span the space;
2. a quasi-random direction scan, each direction first relaxed by a few
   steps of smoothed (log-sum-exp) descent of h on the sphere;
3. local polishing of the best directions: each step moves d to the normal of
   the hull facet hit by the ray along d (an LP), which never increases h;
   the final facet is snapped to an exact hyperplane fit.

Every value it returns is h(d) for an explicit unit d, so it is an upper bound
on the true inradius; polishing makes it exact at the located facet, but the
search can settle on a locally minimal facet that is not the global one.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np
from scipy.optimize import linprog, nnls
from scipy.spatial import ConvexHull, QhullError
from scipy.stats import norm, qmc


@dataclass(frozen=True)
class QualityConfig:
    """Discretization and solver settings.

    ``torque_scale`` (1/m) multiplies torques so they are commensurate with unit
    forces; callers normally set it to 1 / object bounding radius.
    ``torsion_radius`` (m) is the soft-finger patch radius: each contact can
    resist a torsional moment up to ``friction * torsion_radius`` per unit
    normal force. Zero gives pure point contacts with friction.
    """

    cone_edges: int = 8
    torque_scale: float = 1.0
    torsion_radius: float = 0.005
    direction_samples: int = 256
    smoothing_steps: int = 40
    polish_starts: int = 8
    max_polish_steps: int = 25
    tol: float = 1e-6
    backend: str = "hull"

    def __post_init__(self):
        if self.backend not in ("hull", "directions"):
            raise ValueError(f"unknown quality backend {self.backend!r}")
        if self.cone_edges < 3:
            raise ValueError("need at least 3 friction cone edges")
        if not self.torque_scale > 0 or not self.tol > 0:
            raise ValueError("torque_scale and tol must be positive")
        if self.torsion_radius < 0:
            raise ValueError("torsion_radius must be nonnegative")


def _tangent_basis(normal, reference=None):
    normal = np.asarray(normal, dtype=np.float64)
    t1 = None
    if reference is not None:
        ref = np.asarray(reference, dtype=np.float64)
        ref = ref - (ref @ normal) * normal
        if np.linalg.norm(ref) > 1e-9:
            t1 = ref / np.linalg.norm(ref)
    if t1 is None:
        helper = np.eye(3)[np.argmin(np.abs(normal))]
        t1 = np.cross(normal, helper)
        t1 /= np.linalg.norm(t1)
    return t1, np.cross(normal, t1)


def friction_cone_edges(normal, friction: float, edges: int, reference=None) -> np.ndarray:
    """Unit edge forces of the linearized friction cone around ``-normal``.

    The first edge lies in the plane of ``normal`` and ``reference`` (tilted
    toward ``reference``); the others are evenly spaced in azimuth.
    """
    normal = np.asarray(normal, dtype=np.float64)
    if friction == 0:
        return -normal[None, :]
    t1, t2 = _tangent_basis(normal, reference)
    phi = 2 * np.pi * np.arange(edges) / edges
    f = -normal + friction * (np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2)
    return f / np.linalg.norm(f, axis=1, keepdims=True)


def contact_wrenches(point, normal, centroid, friction: float, cfg: QualityConfig = QualityConfig(),
                     reference=None) -> np.ndarray:
    """Wrench generators of one contact as an ``(k, 6)`` array ``[force, scaled torque]``.

    ``normal`` is the outward surface normal. The first ``cone_edges`` rows are
    the friction cone edges; with friction and a positive torsion radius two more
    rows carry the unit normal push with +/- torsional moment.
    """
    if friction < 0:
        raise ValueError("friction coefficient must be nonnegative")
    normal = np.asarray(normal, dtype=np.float64)
    arm = np.asarray(point, dtype=np.float64) - np.asarray(centroid, dtype=np.float64)
    forces = friction_cone_edges(normal, friction, cfg.cone_edges, reference)
    torques = cfg.torque_scale * np.cross(arm, forces)
    w = np.hstack([forces, torques])
    sigma = friction * cfg.torsion_radius
    if sigma > 0:
        push = -normal
        base = cfg.torque_scale * np.cross(arm, push)
        spin = cfg.torque_scale * sigma * normal
        w = np.vstack([w, np.r_[push, base + spin], np.r_[push, base - spin]])
    return w


def grasp_wrenches(c1, n1, c2, n2, centroid, friction, cfg: QualityConfig = QualityConfig()) -> np.ndarray:
    """Wrenches of a two-finger grasp, each cone discretized with an edge toward the
    opposite contact."""
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    return np.vstack([
        contact_wrenches(c1, n1, centroid, friction, cfg, reference=c2 - c1),
        contact_wrenches(c2, n2, centroid, friction, cfg, reference=c1 - c2),
    ])


@lru_cache(maxsize=16)
def _directions(dim: int, count: int) -> np.ndarray:
    pts = qmc.Sobol(dim, scramble=True, seed=1234).random(count)
    d = norm.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    d.setflags(write=False)
    return d


def origin_margin(wrenches) -> float:
    """Largest s such that the origin is a convex combination with every weight >= s.

    Positive iff the origin lies in the relative interior of the hull.
    """
    W = np.asarray(wrenches, dtype=np.float64)
    k, dim = W.shape
    # variables: lambda_1..k, s ; maximize s
    c = np.zeros(k + 1)
    c[-1] = -1.0
    A_eq = np.zeros((dim + 1, k + 1))
    A_eq[:dim, :k] = W.T
    A_eq[dim, :k] = 1.0
    b_eq = np.zeros(dim + 1)
    b_eq[dim] = 1.0
    A_ub = np.hstack([-np.eye(k), np.ones((k, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(k), A_eq=A_eq, b_eq=b_eq,
                  bounds=[(0, None)] * k + [(None, 1.0)], method="highs")
    if res.status != 0:
        return 0.0
    return float(res.x[-1])


def _relax(W, dirs, steps):
    """Annealed log-sum-exp descent of the support function, all seeds at once."""
    return _relax_kernel(np.ascontiguousarray(W), np.array(dirs, dtype=np.float64), steps)


@nb.njit(cache=True)
def _relax_kernel(W, d, steps):
    k, dim = W.shape
    scale = np.abs(W).max()
    s = np.empty(k)
    g = np.empty(dim)
    for i in range(d.shape[0]):
        for it in range(steps):
            beta = (5.0 + 200.0 * it / steps) / scale
            top = -np.inf
            for j in range(k):
                acc = 0.0
                for c in range(dim):
                    acc += W[j, c] * d[i, c]
                s[j] = acc
                top = max(top, acc)
            total = 0.0
            g[:] = 0.0
            for j in range(k):
                p = np.exp(beta * (s[j] - top))
                total += p
                for c in range(dim):
                    g[c] += p * W[j, c]
            gd = 0.0
            for c in range(dim):
                g[c] /= total
                gd += g[c] * d[i, c]
            nrm = 0.0
            for c in range(dim):
                d[i, c] -= (0.3 / scale) * (g[c] - gd * d[i, c])
                nrm += d[i, c] * d[i, c]
            nrm = np.sqrt(nrm)
            for c in range(dim):
                d[i, c] /= nrm
    return d


def _ray_facet(W, d0):
    """Normal of the hull facet hit by the ray along ``d0`` (origin interior)."""
    k, dim = W.shape
    c = np.zeros(dim + 1)
    c[-1] = 1.0
    A_ub = np.hstack([W, -np.ones((k, 1))])
    A_eq = np.r_[d0, 0.0][None, :]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(k), A_eq=A_eq, b_eq=[1.0],
                  bounds=[(None, None)] * (dim + 1), method="highs")
    if res.status != 0:
        return None
    x = res.x[:dim]
    n = np.linalg.norm(x)
    return x / n if n > 0 else None


def _snap(W, d):
    """Refit a supporting hyperplane through the wrenches nearly active at ``d``.

    Candidate active sets are the top-``dim`` wrenches and every wrench within a
    ladder of tolerances of the maximum; a fit is kept only if it supports the
    hull and lowers the support value.
    """
    s = W @ d
    h = s.max()
    dim = W.shape[1]
    scale = max(1e-300, np.abs(W).max())
    sets = [np.argsort(-s, kind="stable")[:dim]]
    sets += [np.flatnonzero(s >= h - tol * scale) for tol in (1e-9, 1e-6, 1e-4, 1e-3, 1e-2)]
    best, best_h = d, h
    for active in sets:
        if len(active) < dim:
            continue
        a, *_ = np.linalg.lstsq(W[active], np.ones(len(active)), rcond=None)
        na = np.linalg.norm(a)
        if not np.isfinite(na) or na == 0 or (W @ a).max() > 1 + 1e-10:
            continue
        cand = a / na
        ch = (W @ cand).max()
        if ch < best_h:
            best, best_h = cand, ch
    return best


def _foot_inside(W, d, h):
    """Whether the foot point ``h * d`` lies in the convex hull of the active wrenches,
    i.e. ``d`` is a local minimum of the support function."""
    s = W @ d
    A = W[s >= h - 1e-9 * max(1.0, abs(h))]
    M = np.vstack([A.T, 1e3 * np.ones(len(A))])
    rhs = np.r_[h * d, 1e3]
    _, resid = nnls(M, rhs)
    return resid <= 1e-9 * max(1.0, np.abs(W).max())


def _polish(W, d, max_steps, known=None):
    d = _snap(W, d)
    val = (W @ d).max()
    steps = 0
    if known is not None and d @ known > 1 - 1e-12:
        return d, val, steps
    while steps < max_steps and not _foot_inside(W, d, val):
        steps += 1
        nd = _ray_facet(W, d)
        if nd is None:
            break
        nd = _snap(W, nd)
        nval = (W @ nd).max()
        if nval >= val - 1e-13 * max(1.0, val):
            break
        d, val = nd, nval
    return d, val, steps


@dataclass(frozen=True)
class QualityResult:
    quality: float
    direction: np.ndarray | None
    scan_value: float
    polish_steps: int
    margin: float

    @property
    def improvement(self) -> float:
        """How much polishing lowered the best scanned support value."""
        return self.scan_value - self.quality if self.direction is not None else 0.0


def ferrari_canny_result(wrenches, cfg: QualityConfig = QualityConfig()) -> QualityResult:
    W = np.atleast_2d(np.asarray(wrenches, dtype=np.float64))
    k, dim = W.shape
    if k <= dim or np.linalg.matrix_rank(W, tol=1e-10 * max(1.0, np.abs(W).max())) < dim:
        return QualityResult(0.0, None, 0.0, 0, 0.0)
    margin = origin_margin(W)
    if margin <= 1e-12:
        return QualityResult(0.0, None, 0.0, 0, margin)
    if cfg.backend == "hull":
        try:
            eq = ConvexHull(W).equations
        except QhullError:
            pass  # nearly flat set; the direction search copes with it
        else:
            i = int(np.argmax(eq[:, -1]))
            q = float(max(-eq[i, -1], 0.0))
            return QualityResult(q, eq[i, :-1].copy(), q, 0, margin)
    dirs = _relax(W, _directions(dim, cfg.direction_samples), cfg.smoothing_steps)
    h = (dirs @ W.T).max(axis=1)
    starts = []
    for i in np.argsort(h, kind="stable"):
        if all(dirs[i] @ dirs[j] < 0.999 for j in starts):
            starts.append(i)
            if len(starts) == cfg.polish_starts:
                break
    best_val, best_dir, steps = np.inf, None, 0
    for i in starts:
        d, val, n = _polish(W, dirs[i], cfg.max_polish_steps, best_dir)
        steps += n
        if val < best_val:
            best_val, best_dir = val, d
    return QualityResult(float(max(best_val, 0.0)), best_dir, float(h.min()), steps, margin)


def ferrari_canny(wrenches, cfg: QualityConfig = QualityConfig()) -> float:
    """Ferrari-Canny quality: inradius of the wrench hull about the origin, 0 if
    the origin is not interior."""
    return ferrari_canny_result(wrenches, cfg).quality


def is_force_closure(wrenches, cfg: QualityConfig = QualityConfig()) -> bool:
    return ferrari_canny(wrenches, cfg) > cfg.tol
