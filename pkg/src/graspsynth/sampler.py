"""Antipodal grasp candidate generation on a single object."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .collision import MARGIN, check_collision_object, gripper_boxes
from .geom.bvh import Bvh
from .geom.mesh import EPS, sample_surface
from .grasp import (CLEARANCE, Grasp, GraspDistanceWeights, GripperModel, canonical_closing, grasp_frame,
                    nms)
from .objects import ObjectModel
from .quality import QualityConfig, ferrari_canny, grasp_wrenches

log = logging.getLogger(__name__)

POSITIVE = "positive"
NO_ANTIPODAL = "negative_no_antipodal"
NOT_FORCE_CLOSURE = "negative_not_force_closure"
COLLISION = "negative_collision"
WIDTH = "rejected_width"
STATUSES = (POSITIVE, NO_ANTIPODAL, NOT_FORCE_CLOSURE, COLLISION, WIDTH)


@dataclass(frozen=True)
class SamplerConfig:
    n_points: int = 16384
    directions: int = 8
    friction: float = 0.3
    seed: int = 0
    approach_trials: int = 8
    clearance: float = CLEARANCE
    collision_margin: float = MARGIN
    nms_threshold: float = 0.02
    weights: GraspDistanceWeights = GraspDistanceWeights()

    def __post_init__(self):
        if self.n_points <= 0 or self.directions <= 0:
            raise ValueError("n_points and directions must be positive")
        if self.friction < 0:
            raise ValueError("friction must be nonnegative")


@dataclass
class ObjectGraspSet:
    object_id: str
    positives: list = field(default_factory=list)
    negatives: list = field(default_factory=list)
    negative_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    counts: dict = field(default_factory=dict)


def _cap_directions(axes, half_angle, k, rng):
    """``k`` directions per axis, uniform on the spherical cap of ``half_angle``."""
    axes = np.atleast_2d(np.asarray(axes, dtype=np.float64))
    n = len(axes)
    cos_a = 1.0 - rng.random((n, k)) * (1.0 - np.cos(half_angle))
    phi = 2 * np.pi * rng.random((n, k))
    sin_a = np.sqrt(np.maximum(0.0, 1.0 - cos_a ** 2))
    helper = np.where(np.abs(axes[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    t1 = np.cross(axes, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(axes, t1)
    d = (cos_a[..., None] * axes[:, None, :]
         + (sin_a * np.cos(phi))[..., None] * t1[:, None, :]
         + (sin_a * np.sin(phi))[..., None] * t2[:, None, :])
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def sample_cone_directions(inward_normal, friction: float, k: int, seed: int) -> np.ndarray:
    """``k`` unit directions uniform over the friction cone (half-angle atan(friction))."""
    if friction < 0 or k < 1:
        raise ValueError("need friction >= 0 and k >= 1")
    axis = np.asarray(inward_normal, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    if friction == 0:
        return np.tile(axis, (k, 1))
    return _cap_directions(axis, np.arctan(friction), k, np.random.default_rng(seed))[0]


def find_antipodal_contact(bvh: Bvh, c1, direction, max_travel: float = np.inf):
    """Exit point of the ray from ``c1`` through the body.

    Returns ``(c2, outward_normal)`` for the last surface crossing within
    ``max_travel`` if that crossing leaves the body, else ``None``.
    """
    c1 = np.asarray(c1, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    t, tri = bvh.intersect(c1[None], d[None], EPS, max_travel, farthest=True)
    if tri[0] < 0:
        return None
    n2 = bvh.mesh.normals[tri[0]]
    if n2 @ d <= 0:
        return None
    return c1 + t[0] * d, n2.copy()


def is_antipodal(c1, n1, c2, n2, friction: float) -> bool:
    """Both friction cones (around the inward normals) contain the line between contacts."""
    c1, n1, c2, n2 = (np.asarray(x, dtype=np.float64) for x in (c1, n1, c2, n2))
    u = c2 - c1
    length = np.linalg.norm(u)
    if length == 0:
        raise ValueError("contacts coincide")
    u /= length
    cos_lim = np.cos(np.arctan(friction)) - 1e-12
    return bool(-(u @ n1) >= cos_lim and u @ n2 >= cos_lim)


def _approach_candidates(closing, mean_normal, angles):
    helper = np.eye(3)[np.argmin(np.abs(closing))]
    a = np.cross(closing, helper)
    a /= np.linalg.norm(a)
    b = np.cross(closing, a)
    cands = np.cos(angles)[:, None] * a + np.sin(angles)[:, None] * b
    return cands[cands @ mean_normal <= 0]


def generate_grasps(obj: ObjectModel, gripper: GripperModel, cfg: SamplerConfig,
                    quality_cfg: QualityConfig | None = None) -> ObjectGraspSet:
    """Sample contacts, search antipodal partners, filter by force closure and
    collision, attach Ferrari-Canny quality and prune with NMS."""
    qcfg = replace(quality_cfg or QualityConfig(), torque_scale=1.0 / obj.radius)
    bvh = obj.bvh
    centroid = obj.centroid
    rng = np.random.default_rng(cfg.seed)
    samples = sample_surface(obj.mesh, cfg.n_points, int(rng.integers(2**63)))
    N, k = len(samples), cfg.directions
    inward = -samples.normals
    if cfg.friction == 0:
        dirs = np.repeat(inward[:, None, :], k, axis=1)
    else:
        dirs = _cap_directions(inward, np.arctan(cfg.friction), k, rng)
    angles = 2 * np.pi * rng.random((N, k, cfg.approach_trials))

    c1 = np.repeat(samples.points, k, axis=0)
    flat_dirs = dirs.reshape(-1, 3)
    t, tri = bvh.intersect(c1, flat_dirs, EPS, gripper.max_width, farthest=True)
    beyond = np.zeros(len(c1), dtype=bool)
    miss = tri < 0
    if miss.any():
        _, tri_far = bvh.intersect(c1[miss], flat_dirs[miss], gripper.max_width, np.inf)
        beyond[np.flatnonzero(miss)] = tri_far >= 0

    counts = dict.fromkeys(STATUSES, 0)
    positives, negatives = [], []
    point_ok = np.zeros(N, dtype=bool)
    for j in range(N * k):
        p, q = divmod(j, k)
        if tri[j] < 0:
            counts[WIDTH if beyond[j] else NO_ANTIPODAL] += 1
            continue
        d = flat_dirs[j]
        n2 = bvh.mesh.normals[tri[j]]
        if n2 @ d <= 0:
            counts[NO_ANTIPODAL] += 1
            continue
        a, b = c1[j], c1[j] + t[j] * d
        n1 = samples.normals[p]
        width = float(np.linalg.norm(b - a)) + 2 * cfg.clearance
        if width > gripper.max_width:
            counts[WIDTH] += 1
            continue
        closing = canonical_closing((b - a) / np.linalg.norm(b - a))
        approaches = _approach_candidates(closing, 0.5 * (n1 + n2), angles[p, q])
        meta = {"point": int(p)}
        if not is_antipodal(a, n1, b, n2, cfg.friction):
            counts[NOT_FORCE_CLOSURE] += 1
            if len(approaches):
                negatives.append(Grasp.from_contacts(a, b, approaches[0], width, status=NOT_FORCE_CLOSURE, **meta))
            continue
        free = []
        for n in approaches:
            g = Grasp.from_contacts(a, b, n, width, **meta)
            if not check_collision_object(gripper_boxes(gripper, grasp_frame(g, gripper), width), bvh,
                                          cfg.collision_margin):
                free.append(g)
        if not free:
            counts[COLLISION] += 1
            if len(approaches):
                negatives.append(Grasp.from_contacts(a, b, approaches[0], width, status=COLLISION, **meta))
            continue
        quality = ferrari_canny(grasp_wrenches(a, n1, b, n2, centroid, cfg.friction, qcfg), qcfg)
        if quality <= qcfg.tol:
            counts[NOT_FORCE_CLOSURE] += 1
            negatives.append(replace(free[0], meta={**meta, "status": NOT_FORCE_CLOSURE}))
            continue
        counts[POSITIVE] += 1
        point_ok[p] = True
        positives.extend(g.with_quality(quality) for g in free)

    kept = nms(positives, cfg.nms_threshold, cfg.weights)
    counts["positive_grasps_before_nms"] = len(positives)
    counts["positive_grasps"] = len(kept)
    log.info("%s: %s", obj.object_id, counts)
    return ObjectGraspSet(obj.object_id, kept, negatives, samples.points[~point_ok].copy(), counts)
