"""In-scene grasp filtering and per-point label / mask broadcasting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .collision import MARGIN, check_collision_scene, closing_box, gripper_boxes
from .grasp import GripperModel, grasp_frame
from .scene import SceneAnnotations, SceneGeometry

MASK_NEGATIVE, MASK_POSITIVE, MASK_UNLABELED = 0, 1, 2
DEFAULT_RADIUS = 0.005

CONTACT_POSITIVE = 1
CONTACT_COLLISION = 0  # contact of a grasp blocked in the scene
CONTACT_UNSUITABLE = -1  # single-object unsuitable point


@dataclass
class ContactSet:
    """Contact points with the label each one broadcasts.

    ``grasp_ref`` indexes the scene grasp list (-1 for unsuitable points);
    ``kind`` is one of the ``CONTACT_*`` codes.
    """

    points: np.ndarray
    grasp_ref: np.ndarray
    kind: np.ndarray

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls) -> "ContactSet":
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))


@dataclass
class FilterResult:
    positive_refs: list  # indices into the scene grasp list of collision-free grasps
    p_pos: ContactSet
    p_neg: ContactSet
    collided_refs: list


def scene_grasp_filter(geometry: SceneGeometry, annotations: SceneAnnotations,
                       gripper: GripperModel = GripperModel(), margin: float = MARGIN) -> FilterResult:
    """Split the scene grasps by the scene collision check and pool contact points.

    Contacts of collision-free grasps go to ``p_pos``; contacts of blocked grasps
    and every unsuitable single-object point go to ``p_neg``.
    """
    pos_refs, col_refs = [], []
    pos_pts, pos_ref, neg_pts, neg_ref, neg_kind = [], [], [], [], []
    for i, g in enumerate(annotations.grasps):
        frame = grasp_frame(g, gripper)
        report = check_collision_scene(gripper_boxes(gripper, frame, g.width), geometry,
                                       int(annotations.grasp_instance[i]),
                                       closing_box(gripper, frame, g.width), margin)
        if report.collided:
            col_refs.append(i)
            neg_pts += [g.c1, g.c2]
            neg_ref += [i, i]
            neg_kind += [CONTACT_COLLISION] * 2
        else:
            pos_refs.append(i)
            pos_pts += [g.c1, g.c2]
            pos_ref += [i, i]
    n_unsuitable = len(annotations.negative_points)
    p_pos = ContactSet(np.array(pos_pts).reshape(-1, 3), np.array(pos_ref, dtype=np.int64),
                       np.full(len(pos_ref), CONTACT_POSITIVE, dtype=np.int64))
    p_neg = ContactSet(
        np.vstack([np.array(neg_pts).reshape(-1, 3), annotations.negative_points.reshape(-1, 3)]),
        np.concatenate([np.array(neg_ref, dtype=np.int64), np.full(n_unsuitable, -1, dtype=np.int64)]),
        np.concatenate([np.array(neg_kind, dtype=np.int64),
                        np.full(n_unsuitable, CONTACT_UNSUITABLE, dtype=np.int64)]),
    )
    return FilterResult(pos_refs, p_pos, p_neg, col_refs)


@dataclass
class LabeledCloud:
    """Per-point mask, label ``[n, r, width, Q]`` and grasp reference.

    Unlabeled points and unsuitable negatives carry zero labels; ``grasp_ref`` is
    -1 wherever no grasp is associated.
    """

    points: np.ndarray
    mask: np.ndarray
    approach: np.ndarray
    closing: np.ndarray
    width: np.ndarray
    quality: np.ndarray
    grasp_ref: np.ndarray

    def __len__(self):
        return len(self.points)

    @classmethod
    def unlabeled(cls, points) -> "LabeledCloud":
        points = np.asarray(points, dtype=np.float32).reshape(-1, 3)
        n = len(points)
        return cls(points, np.full(n, MASK_UNLABELED, dtype=np.int8), np.zeros((n, 3), np.float32),
                   np.zeros((n, 3), np.float32), np.zeros(n, np.float32), np.zeros(n, np.float32),
                   np.full(n, -1, dtype=np.int32))

    def equals(self, other: "LabeledCloud") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f)) and
                   getattr(self, f).dtype == getattr(other, f).dtype
                   for f in ("points", "mask", "approach", "closing", "width", "quality", "grasp_ref"))


def _contact_table(grasps, p_pos: ContactSet, p_neg: ContactSet):
    """Stacked contacts with sort keys and label payloads.

    Priority: higher Q first, then positive before negative, then lower grasp
    index, then earlier contact. Collision negatives score Q = 0.
    """
    pts = np.vstack([p_pos.points.reshape(-1, 3), p_neg.points.reshape(-1, 3)])
    ref = np.concatenate([p_pos.grasp_ref, p_neg.grasp_ref]).astype(np.int64)
    positive = np.r_[np.ones(len(p_pos), dtype=bool), np.zeros(len(p_neg), dtype=bool)]
    n = len(pts)
    q = np.zeros(n)
    approach = np.zeros((n, 3))
    closing = np.zeros((n, 3))
    width = np.zeros(n)
    for k in range(n):
        if ref[k] < 0:
            continue
        g = grasps[ref[k]]
        approach[k], closing[k], width[k] = g.approach, g.closing, g.width
        if positive[k]:
            q[k] = g.quality
    # lexsort: last key is primary
    big = np.iinfo(np.int64).max
    order = np.lexsort((np.arange(n), np.where(ref < 0, big, ref), ~positive, -q))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    return pts, ref, positive, q, approach, closing, width, rank


def broadcast_labels(cloud, grasps, p_pos: ContactSet, p_neg: ContactSet,
                     radius: float = DEFAULT_RADIUS) -> LabeledCloud:
    """Give every cloud point within ``radius`` of a contact the label of the
    best-ranked such contact; everything else stays unlabeled."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    out = LabeledCloud.unlabeled(cloud)
    pts, ref, positive, q, approach, closing, width, rank = _contact_table(grasps, p_pos, p_neg)
    if len(out) == 0 or len(pts) == 0:
        return out
    tree = cKDTree(np.asarray(cloud, dtype=np.float64).reshape(-1, 3))
    best = np.full(len(out), np.iinfo(np.int64).max)
    winner = np.full(len(out), -1, dtype=np.int64)
    for k, hits in enumerate(tree.query_ball_point(pts, radius)):
        if not hits:
            continue
        hits = np.asarray(hits, dtype=np.int64)
        better = rank[k] < best[hits]
        best[hits[better]] = rank[k]
        winner[hits[better]] = k
    lab = np.flatnonzero(winner >= 0)
    w = winner[lab]
    out.mask[lab] = np.where(positive[w], MASK_POSITIVE, MASK_NEGATIVE)
    out.approach[lab] = approach[w]
    out.closing[lab] = closing[w]
    out.width[lab] = width[w]
    out.quality[lab] = q[w]
    out.grasp_ref[lab] = ref[w]
    return out
