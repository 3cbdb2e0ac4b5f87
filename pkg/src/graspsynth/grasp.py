"""Parallel-jaw gripper geometry, the 7-DoF grasp tuple, grasp distance and NMS."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geom.mesh import Pose


@dataclass(frozen=True)
class GripperModel:
    """Box-approximated parallel-jaw gripper, all dimensions in meters.

    Fingers extend ``finger_depth`` along the approach axis from the bottom
    center to the finger tips; the base plate sits behind the bottom center.
    """

    max_width: float = 0.04
    finger_depth: float = 0.04
    finger_thickness: float = 0.01
    finger_height: float = 0.02
    base_depth: float = 0.02
    base_width: float = 0.08
    base_height: float = 0.02

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"gripper {name} must be positive, got {value}")

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass(frozen=True)
class GraspDistanceWeights:
    position: float = 1.0
    closing: float = 0.03
    approach: float = 0.03

    def __post_init__(self):
        if min(self.position, self.closing, self.approach) < 0:
            raise ValueError("grasp distance weights must be nonnegative")


def canonical_closing(r) -> np.ndarray:
    """Flip a closing axis so its largest-magnitude component is positive."""
    r = np.asarray(r, dtype=np.float64)
    return -r if r[np.argmax(np.abs(r))] < 0 else r


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@dataclass(frozen=True, eq=False)
class Grasp:
    """``(o, n, r, width, c1, c2)`` plus quality.

    ``center`` is the contact midpoint (the point between the finger tips),
    ``approach`` and ``closing`` are orthogonal unit vectors.
    """

    center: np.ndarray
    approach: np.ndarray
    closing: np.ndarray
    width: float
    c1: np.ndarray
    c2: np.ndarray
    quality: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("center", "approach", "closing", "c1", "c2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))
        object.__setattr__(self, "width", float(self.width))
        object.__setattr__(self, "quality", float(self.quality))

    @classmethod
    def from_contacts(cls, c1, c2, approach, width, quality=0.0, **meta) -> "Grasp":
        c1 = np.asarray(c1, dtype=np.float64)
        c2 = np.asarray(c2, dtype=np.float64)
        closing = canonical_closing(_unit(c2 - c1))
        return cls(0.5 * (c1 + c2), _unit(approach), closing, width, c1, c2, quality, meta)

    def with_quality(self, quality: float) -> "Grasp":
        return replace(self, quality=float(quality))

    def transformed(self, pose: Pose) -> "Grasp":
        R = pose.rotation
        return replace(
            self,
            center=pose.apply(self.center),
            approach=R @ self.approach,
            closing=R @ self.closing,
            c1=pose.apply(self.c1),
            c2=pose.apply(self.c2),
        )

    def validate(self, gripper: GripperModel | None = None) -> None:
        if abs(float(self.approach @ self.closing)) >= 1e-6:
            raise ValueError("approach and closing directions are not orthogonal")
        for name in ("approach", "closing"):
            if abs(np.linalg.norm(getattr(self, name)) - 1.0) > 1e-9:
                raise ValueError(f"{name} is not a unit vector")
        if not self.width > 0 or (gripper is not None and self.width > gripper.max_width + 1e-12):
            raise ValueError(f"grasp width {self.width} outside (0, max_width]")
        if np.linalg.norm(self.c1 - self.c2) > self.width + 1e-9:
            raise ValueError("contact separation exceeds grasp width")
        if np.linalg.norm(self.center - 0.5 * (self.c1 + self.c2)) > 1e-6:
            raise ValueError("grasp center is not the contact midpoint")
        if self.quality < 0:
            raise ValueError("negative grasp quality")


def grasp_frame(g: Grasp, gripper: GripperModel) -> Pose:
    """Gripper frame: X = approach, Y = closing, Z = approach x closing, origin at
    the gripper bottom center (``finger_depth`` behind the grasp center)."""
    n, r = g.approach, g.closing
    if abs(float(n @ r)) >= 1e-6:
        raise ValueError("approach and closing directions are not orthogonal")
    n = _unit(n)
    r = _unit(r - (r @ n) * n)
    rot = np.column_stack([n, r, np.cross(n, r)])
    return Pose(rot, g.center - gripper.finger_depth * n)


def grasp_distance(g1: Grasp, g2: Grasp, w: GraspDistanceWeights = GraspDistanceWeights()) -> float:
    """Weighted sum of midpoint distance, closing-axis angle (sign-free) and approach angle."""
    m1 = 0.5 * (g1.c1 + g1.c2)
    m2 = 0.5 * (g2.c1 + g2.c2)
    d_pos = float(np.linalg.norm(m1 - m2))
    d_close = float(np.arccos(min(1.0, abs(float(g1.closing @ g2.closing))))) / np.pi
    d_app = float(np.arccos(np.clip(float(g1.approach @ g2.approach), -1.0, 1.0))) / np.pi
    return w.position * d_pos + w.closing * d_close + w.approach * d_app


def _stack(grasps):
    mids = np.array([0.5 * (g.c1 + g.c2) for g in grasps]).reshape(-1, 3)
    closing = np.array([g.closing for g in grasps]).reshape(-1, 3)
    approach = np.array([g.approach for g in grasps]).reshape(-1, 3)
    return mids, closing, approach


def _distances_to(i, mids, closing, approach, w):
    d_pos = np.linalg.norm(mids - mids[i], axis=1)
    d_close = np.arccos(np.minimum(1.0, np.abs(closing @ closing[i]))) / np.pi
    d_app = np.arccos(np.clip(approach @ approach[i], -1.0, 1.0)) / np.pi
    return w.position * d_pos + w.closing * d_close + w.approach * d_app


def nms(grasps, threshold: float = 0.02, w: GraspDistanceWeights = GraspDistanceWeights(),
        return_indices: bool = False):
    """Greedy non-maximum suppression by quality.

    Grasps are visited in order of decreasing quality (earlier index first on
    ties); each kept grasp suppresses every remaining grasp within ``threshold``.
    """
    if not threshold > 0:
        raise ValueError("NMS threshold must be positive")
    grasps = list(grasps)
    if not grasps:
        return ([], []) if return_indices else []
    q = np.array([g.quality for g in grasps])
    order = np.argsort(-q, kind="stable")
    mids, closing, approach = _stack(grasps)
    alive = np.ones(len(grasps), dtype=bool)
    keep = []
    for i in order:
        if not alive[i]:
            continue
        keep.append(int(i))
        alive[i] = False
        alive &= _distances_to(i, mids, closing, approach, w) > threshold
    kept = [grasps[i] for i in keep]
    return (kept, keep) if return_indices else kept


CLEARANCE = 0.002


def compute_grasp_width(c1, c2, clearance: float = CLEARANCE, gripper: GripperModel | None = None) -> float | None:
    """Opening width for a contact pair: separation plus clearance on both sides.

    Returns ``None`` when the width exceeds the gripper's maximum opening.
    """
    width = float(np.linalg.norm(np.asarray(c1, dtype=np.float64) - np.asarray(c2, dtype=np.float64))) + 2 * clearance
    if gripper is not None and width > gripper.max_width:
        return None
    return width
