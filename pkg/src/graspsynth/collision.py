"""Gripper-versus-mesh collision with box-approximated fingers and base plate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .geom.bvh import Bvh
from .geom.mesh import Pose
from .grasp import GripperModel

MARGIN = 0.001  # box inflation absorbing tessellation error, meters


@dataclass(frozen=True)
class OrientedBox:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray  # columns are the box axes in world coordinates

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "half_extents", np.asarray(self.half_extents, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        if np.any(self.half_extents <= 0):
            raise ValueError("box half extents must be positive")

    @property
    def volume(self) -> float:
        return float(8 * np.prod(self.half_extents))

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
        return self.center + (signs * self.half_extents) @ self.rotation.T

    def world_bounds(self, margin: float = 0.0):
        ext = np.abs(self.rotation) @ (self.half_extents + margin)
        return self.center - ext, self.center + ext

    def transformed(self, pose: Pose) -> "OrientedBox":
        return OrientedBox(pose.apply(self.center), self.half_extents, pose.rotation @ self.rotation)

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        local = (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.half_extents + margin, axis=-1)


def _local_boxes(gripper: GripperModel, width: float):
    fd, ft, fh = gripper.finger_depth, gripper.finger_thickness, gripper.finger_height
    half_finger = np.array([fd / 2, ft / 2, fh / 2])
    y = width / 2 + ft / 2
    return [
        (np.array([fd / 2, -y, 0.0]), half_finger),
        (np.array([fd / 2, y, 0.0]), half_finger),
        (np.array([-gripper.base_depth / 2, 0.0, 0.0]),
         np.array([gripper.base_depth, gripper.base_width, gripper.base_height]) / 2),
    ]


def gripper_boxes(gripper: GripperModel, frame: Pose, width: float) -> list[OrientedBox]:
    """Two finger boxes (inner faces at +/- width/2 along the closing axis) and the
    base plate behind the bottom center, in world coordinates."""
    if not 0 < width <= gripper.max_width + 1e-12:
        raise ValueError(f"width {width} outside (0, {gripper.max_width}]")
    return [OrientedBox(frame.apply(c), h, frame.rotation) for c, h in _local_boxes(gripper, width)]


def closing_box(gripper: GripperModel, frame: Pose, width: float, scale: float = 1.0) -> OrientedBox:
    """Volume swept between the fingers, optionally scaled about its center."""
    center = np.array([gripper.finger_depth / 2, 0.0, 0.0])
    half = scale * np.array([gripper.finger_depth, width, gripper.finger_height]) / 2
    return OrientedBox(frame.apply(center), half, frame.rotation)


def triangles_intersect_box(tri, box: OrientedBox, margin: float = 0.0) -> np.ndarray:
    """Separating-axis test of many triangles ``(T, 3, 3)`` against one box.

    Touching counts as intersecting. ``margin`` inflates the box half extents.
    """
    tri = np.ascontiguousarray(np.asarray(tri, dtype=np.float64).reshape(-1, 3, 3))
    out = np.zeros(len(tri), dtype=np.bool_)
    _sat(tri, np.arange(len(tri)), box.center, box.rotation, box.half_extents + margin, out, False)
    return out


@nb.njit(cache=True)
def _sat(corners, ids, center, rot, e, out, stop_first):
    v = np.empty((3, 3))
    ed = np.empty((3, 3))
    ax = np.empty(3)
    for m in range(ids.shape[0]):
        k = ids[m]
        # box-local coordinates
        for i in range(3):
            for a in range(3):
                acc = 0.0
                for b in range(3):
                    acc += (corners[k, i, b] - center[b]) * rot[b, a]
                v[i, a] = acc
        sep = False
        for a in range(3):
            lo = min(v[0, a], v[1, a], v[2, a])
            hi = max(v[0, a], v[1, a], v[2, a])
            if lo > e[a] or hi < -e[a]:
                sep = True
                break
        if sep:
            continue
        for i in range(3):
            j = (i + 1) % 3
            for a in range(3):
                ed[i, a] = v[j, a] - v[i, a]
        nx = ed[0, 1] * ed[1, 2] - ed[0, 2] * ed[1, 1]
        ny = ed[0, 2] * ed[1, 0] - ed[0, 0] * ed[1, 2]
        nz = ed[0, 0] * ed[1, 1] - ed[0, 1] * ed[1, 0]
        d = nx * v[0, 0] + ny * v[0, 1] + nz * v[0, 2]
        if abs(d) > abs(nx) * e[0] + abs(ny) * e[1] + abs(nz) * e[2]:
            continue
        for a in range(3):
            for i in range(3):
                # unit axis a cross edge i
                if a == 0:
                    ax[0], ax[1], ax[2] = 0.0, -ed[i, 2], ed[i, 1]
                elif a == 1:
                    ax[0], ax[1], ax[2] = ed[i, 2], 0.0, -ed[i, 0]
                else:
                    ax[0], ax[1], ax[2] = -ed[i, 1], ed[i, 0], 0.0
                p0 = v[0, 0] * ax[0] + v[0, 1] * ax[1] + v[0, 2] * ax[2]
                p1 = v[1, 0] * ax[0] + v[1, 1] * ax[1] + v[1, 2] * ax[2]
                p2 = v[2, 0] * ax[0] + v[2, 1] * ax[1] + v[2, 2] * ax[2]
                r = abs(ax[0]) * e[0] + abs(ax[1]) * e[1] + abs(ax[2]) * e[2]
                if min(p0, p1, p2) > r or max(p0, p1, p2) < -r:
                    sep = True
                    break
            if sep:
                break
        if sep:
            continue
        out[m] = True
        if stop_first:
            return True
    return False


def check_collision_object(boxes, bvh: Bvh, margin: float = MARGIN) -> bool:
    """True if any box (inflated by ``margin``) intersects any triangle of the mesh."""
    corners = bvh.mesh.corners
    for box in boxes:
        lo, hi = box.world_bounds(margin)
        cand = bvh.query_box(lo, hi)
        if len(cand) and _sat(corners, cand, box.center, box.rotation, box.half_extents + margin,
                              np.zeros(len(cand), dtype=np.bool_), True):
            return True
    return False


@dataclass
class CollisionReport:
    collided: bool
    object_ids: list = field(default_factory=list)
    bin_hit: bool = False


def check_collision_scene(boxes, geometry, target: int, closing: OrientedBox | None = None,
                          margin: float = MARGIN) -> CollisionReport:
    """Test gripper boxes against every instance and the bin of a scene.

    ``geometry`` is a :class:`graspsynth.scene.SceneGeometry`. The target
    instance is tested against the finger and base boxes only; every other
    instance and the bin are also tested against ``closing`` (the volume
    between the fingers), which the target is expected to occupy.
    """
    n_inst = len(geometry.instance_bvhs)
    if not 0 <= target < n_inst:
        raise KeyError(f"unknown object instance {target}")
    boxes = list(boxes)
    with_closing = boxes + ([closing] if closing is not None else [])
    ids = []
    lo = np.min([b.world_bounds(margin)[0] for b in with_closing], axis=0)
    hi = np.max([b.world_bounds(margin)[1] for b in with_closing], axis=0)
    for i, bvh in enumerate(geometry.instance_bvhs):
        blo, bhi = geometry.instance_bounds[i]
        if np.any(blo > hi) or np.any(bhi < lo):
            continue
        if check_collision_object(boxes if i == target else with_closing, bvh, margin):
            ids.append(i)
    bin_hit = check_collision_object(with_closing, geometry.bin_bvh, margin)
    return CollisionReport(bool(ids) or bin_hit, ids, bin_hit)
