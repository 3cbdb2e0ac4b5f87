"""Cluttered bin scenes: quasi-static composition, scene geometry and annotation transfer."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numba as nb
import numpy as np
from scipy.spatial import ConvexHull

from .geom import primitives
from .geom.bvh import Bvh
from .geom.distance import inside_closed_mesh, point_mesh_distance
from .geom.mesh import Pose, TriangleMesh, merge_meshes, random_rotation, sample_surface, transform_mesh
from .objects import ObjectModel

log = logging.getLogger(__name__)

DEFAULT_BIN_EXTENTS = (0.4, 0.3, 0.15)
DROP_GAP = 1e-6  # left between resting surfaces, meters
PENETRATION_TOL = 1e-3


@dataclass(frozen=True)
class BinModel:
    """Open-top tray; interior ``[-L/2, L/2] x [-W/2, W/2] x [0, H]`` with the floor top at z = 0."""

    extents: tuple = DEFAULT_BIN_EXTENTS
    wall: float = 0.01

    def __post_init__(self):
        ext = tuple(float(x) for x in self.extents)
        if len(ext) != 3 or min(ext) <= 0 or self.wall <= 0:
            raise ValueError("bin extents and wall thickness must be positive")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "wall", float(self.wall))

    @cached_property
    def mesh(self) -> TriangleMesh:
        return primitives.bin_mesh(self.extents, self.wall)

    def interior_bounds(self, margin: float = 0.0):
        L, W, H = self.extents
        lo = np.array([-L / 2, -W / 2, 0.0]) - margin
        hi = np.array([L / 2, W / 2, H]) + margin
        return lo, hi


@dataclass(frozen=True)
class ObjectInstance:
    object_id: str
    pose: Pose


@dataclass
class Scene:
    bin: BinModel
    instances: list
    seed: int
    requested: int = 0
    warnings: list = field(default_factory=list)

    @property
    def incomplete(self) -> bool:
        return len(self.instances) < self.requested


class SceneGeometry:
    """World-frame meshes and BVHs for every instance plus the bin.

    ``merged`` holds all instances followed by the bin; ``owner`` gives the
    instance index of each merged triangle, ``-1`` for the bin.
    """

    def __init__(self, scene: Scene, library):
        models = _by_id(library)
        self.scene = scene
        self.instance_meshes = []
        for inst in scene.instances:
            if inst.object_id not in models:
                raise KeyError(f"object {inst.object_id!r} not in library")
            self.instance_meshes.append(transform_mesh(models[inst.object_id].mesh, inst.pose))
        self.instance_bounds = [m.bounds() for m in self.instance_meshes]
        self.bin_mesh = scene.bin.mesh

    @cached_property
    def instance_bvhs(self) -> list:
        return [Bvh(m) for m in self.instance_meshes]

    @cached_property
    def bin_bvh(self) -> Bvh:
        return Bvh(self.bin_mesh)

    @cached_property
    def _merged(self):
        mesh, owner = merge_meshes(self.instance_meshes + [self.bin_mesh])
        owner = np.where(owner == len(self.instance_meshes), -1, owner)
        return mesh, owner

    @property
    def merged(self) -> TriangleMesh:
        return self._merged[0]

    @property
    def owner(self) -> np.ndarray:
        return self._merged[1]

    @cached_property
    def merged_bvh(self) -> Bvh:
        return Bvh(self.merged)


def _by_id(library) -> dict:
    if isinstance(library, dict):
        return library
    return {o.object_id: o for o in library}


# --------------------------------------------------------------------------- drop kernel

@nb.njit(cache=True)
def _drop_distance(mv, mt, me, sv, st, se):
    """Smallest downward translation of mesh (mv, mt, me) bringing it into contact
    with mesh (sv, st, se); ``inf`` if they never meet.

    Contacts of polyhedra under translation happen vertex-on-face or edge-on-edge,
    so checking moving vertices against static faces, static vertices against
    moving faces, and all edge pairs crossing in the x-y projection is exact.
    """
    best = np.inf
    # moving vertex down onto static face (sign=+1) and static vertex up onto moving face (sign=-1)
    for pass_ in range(2):
        if pass_ == 0:
            pv, tv, tt, sign = mv, sv, st, 1.0
        else:
            pv, tv, tt, sign = sv, mv, mt, -1.0
        for f in range(tt.shape[0]):
            a = tv[tt[f, 0]]
            b = tv[tt[f, 1]]
            c = tv[tt[f, 2]]
            x0 = min(a[0], b[0], c[0])
            x1 = max(a[0], b[0], c[0])
            y0 = min(a[1], b[1], c[1])
            y1 = max(a[1], b[1], c[1])
            det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
            if abs(det) < 1e-18:
                continue  # vertical face: covered by the edge tests
            for i in range(pv.shape[0]):
                px, py = pv[i, 0], pv[i, 1]
                if px < x0 or px > x1 or py < y0 or py > y1:
                    continue
                u = ((px - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (py - a[1])) / det
                v = ((b[0] - a[0]) * (py - a[1]) - (px - a[0]) * (b[1] - a[1])) / det
                if u < -1e-12 or v < -1e-12 or u + v > 1 + 1e-12:
                    continue
                z = a[2] + u * (b[2] - a[2]) + v * (c[2] - a[2])
                t = sign * (pv[i, 2] - z)
                if t < best:
                    best = t
    for i in range(me.shape[0]):
        p = mv[me[i, 0]]
        q = mv[me[i, 1]]
        ex0, ex1 = min(p[0], q[0]), max(p[0], q[0])
        ey0, ey1 = min(p[1], q[1]), max(p[1], q[1])
        dx, dy = q[0] - p[0], q[1] - p[1]
        for j in range(se.shape[0]):
            r = sv[se[j, 0]]
            s = sv[se[j, 1]]
            if max(r[0], s[0]) < ex0 or min(r[0], s[0]) > ex1 or max(r[1], s[1]) < ey0 or min(r[1], s[1]) > ey1:
                continue
            fx, fy = s[0] - r[0], s[1] - r[1]
            den = dx * fy - dy * fx
            if abs(den) < 1e-18:
                continue  # parallel in projection: covered by the vertex tests
            gx, gy = r[0] - p[0], r[1] - p[1]
            a = (gx * fy - gy * fx) / den
            b = (gx * dy - gy * dx) / den
            if a < 0.0 or a > 1.0 or b < 0.0 or b > 1.0:
                continue
            t = (p[2] + a * (q[2] - p[2])) - (r[2] + b * (s[2] - r[2]))
            if t < best:
                best = t
    return best


@dataclass
class _Placed:
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def _align(a, b) -> np.ndarray:
    """Rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    v = np.cross(a, b)
    c = float(a @ b)
    if c < -1 + 1e-12:
        helper = np.eye(3)[np.argmin(np.abs(a))]
        axis = np.cross(a, helper)
        axis /= np.linalg.norm(axis)
        return 2 * np.outer(axis, axis) - np.eye(3)
    k = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + k + k @ k / (1 + c)


def _rot_z(angle) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def _axis_angle(axis, angle) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k


def stable_facet_normals(mesh: TriangleMesh, min_fraction: float = 0.05) -> np.ndarray:
    """Outward normals of convex-hull faces (coplanar simplices merged) whose area is
    at least ``min_fraction`` of the largest face."""
    hull = ConvexHull(mesh.vertices)
    normals = hull.equations[:, :3]
    pts = hull.points[hull.simplices]
    areas = 0.5 * np.linalg.norm(np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]), axis=1)
    keys = np.round(hull.equations, 6)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    face_area = np.bincount(inv, weights=areas)
    face_normal = np.zeros((len(uniq), 3))
    np.add.at(face_normal, inv, normals * areas[:, None])
    face_normal /= np.linalg.norm(face_normal, axis=1, keepdims=True)
    keep = face_area >= min_fraction * face_area.max()
    # deterministic order: largest faces first
    order = np.lexsort((np.arange(keep.sum()), -face_area[keep]))
    return face_normal[keep][order]


@dataclass(frozen=True)
class ComposerConfig:
    placement_attempts: int = 10
    settle_rounds: int = 5
    random_orientations: int = 8
    facet_min_fraction: float = 0.05
    perturb_angle: float = np.deg2rad(15.0)
    perturb_shift: float = 0.01


class _Composer:
    def __init__(self, bin_model: BinModel, cfg: ComposerConfig):
        self.bin = bin_model
        self.cfg = cfg
        self.placed: list[_Placed] = []
        self._edges = {}
        self._facets = {}

    def edges(self, obj: ObjectModel):
        if obj.object_id not in self._edges:
            self._edges[obj.object_id] = obj.mesh.edges
        return self._edges[obj.object_id]

    def facets(self, obj: ObjectModel):
        if obj.object_id not in self._facets:
            self._facets[obj.object_id] = stable_facet_normals(obj.mesh, self.cfg.facet_min_fraction)
        return self._facets[obj.object_id]

    def drop(self, obj: ObjectModel, R, xy):
        """Rest ``obj`` (rotated by R, origin at xy) on the current pile.

        Returns the pose, or ``None`` if the object would leave the bin.
        """
        L, W, H = self.bin.extents
        v = obj.mesh.vertices @ R.T
        lo, hi = v.min(axis=0), v.max(axis=0)
        x = np.clip(xy[0], -L / 2 - lo[0], L / 2 - hi[0])
        y = np.clip(xy[1], -W / 2 - lo[1], W / 2 - hi[1])
        if -L / 2 - lo[0] > L / 2 - hi[0] or -W / 2 - lo[1] > W / 2 - hi[1]:
            return None
        top = max([0.0] + [p.hi[2] for p in self.placed])
        shift = np.array([x, y, top - lo[2] + 0.01])
        mv = v + shift
        mlo, mhi = lo + shift, hi + shift
        t = mlo[2]  # floor contact
        edges = self.edges(obj)
        for p in self.placed:
            if p.lo[0] > mhi[0] or p.hi[0] < mlo[0] or p.lo[1] > mhi[1] or p.hi[1] < mlo[1]:
                continue
            t = min(t, _drop_distance(mv, obj.mesh.triangles, edges, p.vertices, p.triangles, p.edges))
        shift[2] -= t - DROP_GAP
        if hi[2] + shift[2] > H:
            return None
        return Pose(R, shift)

    def commit(self, obj: ObjectModel, pose: Pose):
        v = pose.apply(obj.mesh.vertices)
        self.placed.append(_Placed(v, obj.mesh.triangles, self.edges(obj), v.min(axis=0), v.max(axis=0)))


def _centroid_height(obj: ObjectModel, pose: Pose) -> float:
    return float(pose.apply(obj.centroid)[2])


def compose_scene(library, m: int, bin_model: BinModel | None = None, seed: int = 0,
                  cfg: ComposerConfig = ComposerConfig()) -> Scene:
    """Drop ``m`` objects (sampled with replacement) into the bin one after another.

    Each object gets a random stable-pose candidate orientation and a random
    (x, y), is lowered along -z to first contact, then perturbed and re-lowered
    up to ``settle_rounds`` times, keeping only moves that lower its centroid.
    Objects that cannot be placed inside the bin are skipped with a warning.
    """
    library = list(library.values()) if isinstance(library, dict) else list(library)
    if m < 1 or not library:
        raise ValueError("need m >= 1 and a nonempty library")
    bin_model = bin_model or BinModel()
    rng = np.random.default_rng(seed)
    comp = _Composer(bin_model, cfg)
    L, W, _ = bin_model.extents
    instances, warnings = [], []
    for k in range(m):
        obj = library[int(rng.integers(len(library)))]
        facets = comp.facets(obj)
        pose = None
        # hull-facet candidates first; random orientations only if those never fit
        for attempt in range(cfg.placement_attempts + cfg.random_orientations):
            if attempt < cfg.placement_attempts:
                normal = facets[int(rng.integers(len(facets)))]
                R = _rot_z(rng.uniform(0, 2 * np.pi)) @ _align(normal, np.array([0.0, 0, -1]))
            else:
                R = random_rotation(rng)
            xy = rng.uniform([-L / 2, -W / 2], [L / 2, W / 2])
            pose = comp.drop(obj, R, xy)
            if pose is not None:
                break
        if pose is None:
            msg = f"object {k} ({obj.object_id}) could not be placed inside the bin; skipped"
            log.warning(msg)
            warnings.append(msg)
            continue
        height = _centroid_height(obj, pose)
        for _ in range(cfg.settle_rounds):
            axis = rng.normal(size=3)
            dR = _axis_angle(axis, rng.uniform(0, cfg.perturb_angle))
            xy = pose.translation[:2] + rng.normal(0, cfg.perturb_shift / 2, size=2)
            cand = comp.drop(obj, dR @ pose.rotation, xy)
            if cand is None:
                continue
            h = _centroid_height(obj, cand)
            if h < height:
                pose, height = cand, h
        comp.commit(obj, pose)
        instances.append(ObjectInstance(obj.object_id, pose))
    return Scene(bin_model, instances, int(seed), int(m), warnings)


# --------------------------------------------------------------------------- annotations

@dataclass
class SceneAnnotations:
    """Scene-frame grasps and negative points with their source instance indices."""

    grasps: list
    grasp_instance: np.ndarray
    negative_points: np.ndarray
    negative_instance: np.ndarray


def transform_annotations(scene: Scene, grasp_sets) -> SceneAnnotations:
    """Move every instance's single-object grasps and unsuitable points into the scene."""
    sets = grasp_sets if isinstance(grasp_sets, dict) else {s.object_id: s for s in grasp_sets}
    grasps, owner, neg, neg_owner = [], [], [], []
    for i, inst in enumerate(scene.instances):
        if inst.object_id not in sets:
            raise KeyError(f"no grasp set for object {inst.object_id!r}")
        gs = sets[inst.object_id]
        for g in gs.positives:
            grasps.append(g.transformed(inst.pose))
            owner.append(i)
        pts = np.asarray(gs.negative_points, dtype=np.float64).reshape(-1, 3)
        if len(pts):
            neg.append(inst.pose.apply(pts))
            neg_owner.append(np.full(len(pts), i, dtype=np.int64))
    return SceneAnnotations(
        grasps,
        np.asarray(owner, dtype=np.int64),
        np.concatenate(neg) if neg else np.zeros((0, 3)),
        np.concatenate(neg_owner) if neg_owner else np.zeros(0, dtype=np.int64),
    )


# --------------------------------------------------------------------------- checks

def max_penetration(geometry: SceneGeometry, samples: int = 2000, seed: int = 0) -> float:
    """Largest depth of any instance's vertices or surface samples inside another instance."""
    worst = 0.0
    meshes = geometry.instance_meshes
    for a, mesh_a in enumerate(meshes):
        pts = np.vstack([mesh_a.vertices, sample_surface(mesh_a, samples, seed + a).points])
        for b, bvh_b in enumerate(geometry.instance_bvhs):
            if a == b:
                continue
            lo, hi = geometry.instance_bounds[b]
            near = np.all((pts >= lo) & (pts <= hi), axis=1)
            if not near.any():
                continue
            cand = pts[near]
            inside = inside_closed_mesh(cand, bvh_b)
            if inside.any():
                radius = float(np.max(hi - lo))
                worst = max(worst, float(point_mesh_distance(cand[inside], bvh_b, radius).max()))
    return worst


def instances_inside_bin(geometry: SceneGeometry, tol: float = 1e-6) -> bool:
    lo, hi = geometry.scene.bin.interior_bounds(tol)
    return all(np.all(blo >= lo) and np.all(bhi <= hi) for blo, bhi in geometry.instance_bounds)
