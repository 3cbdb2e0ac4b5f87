"""Colored PLY export: grasp wireframes on a red-to-green quality ramp and mask-colored points."""
from __future__ import annotations

import numpy as np

from ..collision import gripper_boxes
from ..grasp import GripperModel, grasp_frame
from ..labeler import MASK_NEGATIVE, MASK_POSITIVE, LabeledCloud
from .io import atomic_write

COLOR_POSITIVE = (135, 206, 250)
COLOR_COLLISION = (0, 0, 139)
COLOR_UNSUITABLE = (255, 165, 0)
COLOR_UNLABELED = (128, 128, 128)

# box corner index pairs forming the 12 edges (corners ordered as OrientedBox.corners)
_BOX_EDGES = np.array([[0, 1], [2, 3], [4, 5], [6, 7], [0, 2], [1, 3], [4, 6], [5, 7],
                       [0, 4], [1, 5], [2, 6], [3, 7]])


def quality_colors(q, q_max: float | None = None) -> np.ndarray:
    """Red (Q = 0) to green (Q = q_max) as uint8 RGB."""
    q = np.asarray(q, dtype=np.float64)
    q_max = float(q.max()) if q_max is None and len(q) else (q_max or 0.0)
    t = np.clip(q / q_max, 0.0, 1.0) if q_max > 0 else np.zeros_like(q)
    return np.stack([np.round(255 * (1 - t)), np.round(255 * t), np.zeros_like(t)], axis=-1).astype(np.uint8)


def mask_colors(cloud: LabeledCloud) -> np.ndarray:
    out = np.tile(np.array(COLOR_UNLABELED, dtype=np.uint8), (len(cloud), 1))
    out[cloud.mask == MASK_POSITIVE] = COLOR_POSITIVE
    neg = cloud.mask == MASK_NEGATIVE
    out[neg & (cloud.grasp_ref >= 0)] = COLOR_COLLISION
    out[neg & (cloud.grasp_ref < 0)] = COLOR_UNSUITABLE
    return out


def select_top(grasps, top_k: int) -> list:
    """Indices of the ``top_k`` highest-quality grasps (earlier index first on ties)."""
    q = np.array([g.quality for g in grasps])
    return [int(i) for i in np.argsort(-q, kind="stable")[:max(0, top_k)]]


def export_viz(path, cloud: LabeledCloud | None = None, grasps=(), top_k: int = 15,
               gripper: GripperModel = GripperModel()) -> dict:
    """Write points and gripper wireframes to a binary PLY with vertex and edge colors.

    Returns a summary with the exported grasp indices and the colors used.
    """
    grasps = list(grasps)
    chosen = select_top(grasps, top_k)
    verts, vcol, edges, ecol = [], [], [], []
    if cloud is not None and len(cloud):
        verts.append(cloud.points.astype(np.float32))
        vcol.append(mask_colors(cloud))
    offset = sum(len(v) for v in verts)
    gcol = quality_colors([grasps[i].quality for i in chosen])
    for c, i in zip(gcol, chosen):
        g = grasps[i]
        for box in gripper_boxes(gripper, grasp_frame(g, gripper), g.width):
            verts.append(box.corners().astype(np.float32))
            vcol.append(np.tile(c, (8, 1)))
            edges.append(_BOX_EDGES + offset)
            ecol.append(np.tile(c, (12, 1)))
            offset += 8
    V = np.concatenate(verts) if verts else np.zeros((0, 3), np.float32)
    C = np.concatenate(vcol) if vcol else np.zeros((0, 3), np.uint8)
    E = np.concatenate(edges) if edges else np.zeros((0, 2), np.int64)
    EC = np.concatenate(ecol) if ecol else np.zeros((0, 3), np.uint8)
    vdt = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    edt = np.dtype([("vertex1", "<i4"), ("vertex2", "<i4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    vr = np.zeros(len(V), vdt)
    for j, k in enumerate("xyz"):
        vr[k] = V[:, j]
    for j, k in enumerate(("red", "green", "blue")):
        vr[k] = C[:, j]
    er = np.zeros(len(E), edt)
    er["vertex1"], er["vertex2"] = E[:, 0], E[:, 1]
    for j, k in enumerate(("red", "green", "blue")):
        er[k] = EC[:, j]
    header = "\n".join([
        "ply", "format binary_little_endian 1.0",
        f"element vertex {len(vr)}", "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        f"element edge {len(er)}", "property int vertex1", "property int vertex2",
        "property uchar red", "property uchar green", "property uchar blue", "end_header", ""])
    atomic_write(path, header.encode("ascii") + vr.tobytes() + er.tobytes())
    return {"grasps": chosen, "grasp_colors": gcol.tolist(),
            "point_colors": sorted({tuple(int(x) for x in c) for c in C[:len(cloud) if cloud is not None else 0]})}
