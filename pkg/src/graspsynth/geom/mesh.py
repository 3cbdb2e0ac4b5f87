"""Triangle meshes, rigid poses, mesh loaders, surface sampling and mass properties."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

EPS = 1e-7  # geometric coincidence tolerance, meters


class MeshError(ValueError):
    """Raised for unusable meshes (empty, inverted, unparsable)."""


class MeshParseError(MeshError):
    def __init__(self, path, message, line=None, offset=None):
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (byte offset {offset})"
        super().__init__(f"{path}{where}: {message}")
        self.line = line
        self.offset = offset


def _as_rotation(rotation):
    rotation = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
    if not np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-9):
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(rotation) - 1.0) > 1e-9:
        raise ValueError("rotation determinant is not +1")
    return rotation


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``x -> R @ x + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "Pose":
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix[:3, :3], matrix[:3, 3])

    def as_matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix (via a random unit quaternion)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _triangle_geometry(vertices, triangles):
    v0 = vertices[triangles[:, 0]]
    cross = np.cross(vertices[triangles[:, 1]] - v0, vertices[triangles[:, 2]] - v0)
    norm = np.linalg.norm(cross, axis=1)
    return cross, norm


class TriangleMesh:
    """Immutable indexed triangle mesh.

    Triangles with zero area are dropped at construction; ``dropped`` counts them.
    Normals follow counter-clockwise winding (right-hand rule).
    """

    def __init__(self, vertices, triangles, dropped: int = 0):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshError("triangle index out of range")
        cross, norm = _triangle_geometry(vertices, triangles)
        keep = norm > 0.0
        n_bad = int((~keep).sum())
        if n_bad:
            triangles = triangles[keep]
            cross, norm = cross[keep], norm[keep]
        if len(triangles) == 0:
            raise MeshError("mesh has no non-degenerate triangles")
        self.vertices = vertices
        self.triangles = triangles
        self.normals = cross / norm[:, None]
        self.areas = 0.5 * norm
        self.dropped = dropped + n_bad
        for arr in (self.vertices, self.triangles, self.normals, self.areas):
            arr.setflags(write=False)
        self._watertight = None

    def __len__(self):
        return len(self.triangles)

    def __repr__(self):
        return f"TriangleMesh({len(self.vertices)} vertices, {len(self.triangles)} triangles)"

    @property
    def corners(self) -> np.ndarray:
        """(F, 3, 3) triangle corner coordinates."""
        return self.vertices[self.triangles]

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex-index pairs."""
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @property
    def watertight(self) -> bool:
        """Every edge shared by exactly two triangles."""
        if self._watertight is None:
            e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
            _, counts = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
            self._watertight = bool(np.all(counts == 2))
        return self._watertight

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bounding_radius(self, center=None) -> float:
        if center is None:
            lo, hi = self.bounds()
            center = 0.5 * (lo + hi)
        return float(np.linalg.norm(self.vertices - center, axis=1).max())

    def scaled(self, factor: float) -> "TriangleMesh":
        return TriangleMesh(self.vertices * float(factor), self.triangles, self.dropped)


def transform_mesh(mesh: TriangleMesh, pose: Pose) -> TriangleMesh:
    """Rigidly move a mesh; an identity pose returns bit-identical vertices."""
    if np.array_equal(pose.rotation, np.eye(3)) and not pose.translation.any():
        vertices = mesh.vertices.copy()
    else:
        vertices = pose.apply(mesh.vertices)
    return TriangleMesh(vertices, mesh.triangles, mesh.dropped)


def merge_meshes(meshes) -> tuple[TriangleMesh, np.ndarray]:
    """Concatenate meshes; returns the merged mesh and the source index of every triangle."""
    verts, tris, owner = [], [], []
    offset = 0
    for i, m in enumerate(meshes):
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        owner.append(np.full(len(m.triangles), i, dtype=np.int64))
        offset += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris)), np.concatenate(owner)


# --------------------------------------------------------------------------- loaders

def load_mesh(path, format: str | None = None, scale: float = 1.0) -> TriangleMesh:
    """Load an ASCII OBJ, binary STL or binary little-endian PLY file.

    Parameters
    ----------
    path : str or Path
    format : {"obj", "stl", "ply"}, optional
        Inferred from the suffix when omitted.
    scale : float
        Multiplied into every vertex coordinate (source meshes vary in units).
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    data = path.read_bytes()
    if fmt == "obj":
        vertices, triangles = _parse_obj(path, data)
    elif fmt == "stl":
        vertices, triangles = _parse_stl(path, data)
    elif fmt == "ply":
        vertices, triangles = _parse_ply(path, data)
    else:
        raise MeshError(f"{path}: unsupported mesh format {fmt!r}")
    if len(triangles) == 0:
        raise MeshParseError(path, "mesh is empty")
    if scale != 1.0:
        vertices = vertices * float(scale)
    mesh = TriangleMesh(vertices, triangles)
    if mesh.dropped:
        log.info("%s: dropped %d degenerate triangles", path, mesh.dropped)
    return mesh


def _parse_obj(path, data):
    vertices, faces = [], []
    for lineno, raw in enumerate(data.decode("utf-8", errors="replace").splitlines(), start=1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
                if len(vertices[-1]) != 3:
                    raise ValueError("vertex needs three coordinates")
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                if len(idx) < 3:
                    raise ValueError("face needs at least three vertices")
                for j in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[j], idx[j + 1]))
        except ValueError as exc:
            raise MeshParseError(path, str(exc), line=lineno) from None
    vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise MeshParseError(path, "face index out of range")
    return vertices, faces


def _parse_stl(path, data):
    if len(data) < 84:
        raise MeshParseError(path, "truncated STL header", offset=len(data))
    if data[:5].lower() == b"solid" and b"facet" in data[:1024] and len(data) != 84 + 50 * struct.unpack_from("<I", data, 80)[0]:
        raise MeshParseError(path, "ASCII STL is not supported", offset=0)
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + 50 * count
    if len(data) < expected:
        bad = 84 + 50 * ((len(data) - 84) // 50)
        raise MeshParseError(path, f"truncated STL: {count} triangles declared, data ends inside triangle "
                                   f"{(len(data) - 84) // 50}", offset=bad)
    rec = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    tri = np.frombuffer(data, dtype=rec, count=count, offset=84)
    corners = tri["v"].astype(np.float64).reshape(-1, 3)
    vertices, inverse = np.unique(corners, axis=0, return_inverse=True)
    return vertices, inverse.reshape(-1, 3)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def parse_ply_header(path, data):
    """Parse a binary little-endian PLY header.

    Returns ``(elements, body_offset)`` where ``elements`` is a list of
    ``(name, count, properties)`` and each property is ``(name, dtype)`` or
    ``(name, ("list", count_dtype, item_dtype))``.
    """
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise MeshParseError(path, "missing PLY header", offset=0)
    header = data[:end].decode("ascii", errors="replace").splitlines()
    elements = []
    for lineno, line in enumerate(header, start=1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise MeshParseError(path, f"unsupported PLY format {parts[1]}", line=lineno)
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshParseError(path, "property before element", line=lineno)
            try:
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
                else:
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
            except KeyError as exc:
                raise MeshParseError(path, f"unknown PLY type {exc}", line=lineno) from None
        else:
            raise MeshParseError(path, f"unexpected header keyword {parts[0]!r}", line=lineno)
    return elements, end + len(b"end_header\n")


def read_ply_elements(path, data):
    """Decode every element of a binary PLY into numpy arrays (lists become object arrays)."""
    elements, offset = parse_ply_header(path, data)
    out = {}
    for name, count, props in elements:
        if all(not isinstance(t, tuple) for _, t in props):
            dt = np.dtype([(p, "<" + t) for p, t in props])
            need = dt.itemsize * count
            if offset + need > len(data):
                raise MeshParseError(path, f"truncated element {name!r}", offset=len(data))
            out[name] = np.frombuffer(data, dtype=dt, count=count, offset=offset)
            offset += need
            continue
        rows = {p: [] for p, _ in props}
        for _ in range(count):
            for p, t in props:
                if isinstance(t, tuple):
                    cdt, idt = np.dtype("<" + t[1]), np.dtype("<" + t[2])
                    if offset + cdt.itemsize > len(data):
                        raise MeshParseError(path, f"truncated element {name!r}", offset=offset)
                    n = int(np.frombuffer(data, cdt, 1, offset)[0])
                    offset += cdt.itemsize
                    if offset + n * idt.itemsize > len(data):
                        raise MeshParseError(path, f"truncated element {name!r}", offset=offset)
                    rows[p].append(np.frombuffer(data, idt, n, offset))
                    offset += n * idt.itemsize
                else:
                    dt = np.dtype("<" + t)
                    if offset + dt.itemsize > len(data):
                        raise MeshParseError(path, f"truncated element {name!r}", offset=offset)
                    rows[p].append(np.frombuffer(data, dt, 1, offset)[0])
                    offset += dt.itemsize
        out[name] = rows
    return out


def _parse_ply(path, data):
    elements = read_ply_elements(path, data)
    if "vertex" not in elements or "face" not in elements:
        raise MeshParseError(path, "PLY needs vertex and face elements", offset=0)
    v = elements["vertex"]
    vertices = np.stack([np.asarray(v[k], dtype=np.float64) for k in ("x", "y", "z")], axis=1)
    faces = elements["face"]
    key = "vertex_indices" if "vertex_indices" in faces else "vertex_index"
    tris = []
    for poly in faces[key]:
        for j in range(1, len(poly) - 1):
            tris.append((poly[0], poly[j], poly[j + 1]))
    tris = np.array(tris, dtype=np.int64).reshape(-1, 3)
    if len(tris) and (tris.min() < 0 or tris.max() >= len(vertices)):
        raise MeshParseError(path, "face index out of range")
    return vertices, tris


def write_obj(path, mesh: TriangleMesh) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------- sampling

@dataclass(frozen=True)
class SurfaceSamples:
    """Points on a mesh surface with the outward normal and triangle of each."""

    points: np.ndarray
    normals: np.ndarray
    triangle_ids: np.ndarray

    def __len__(self):
        return len(self.points)


def sample_surface(mesh: TriangleMesh, count: int, seed: int) -> SurfaceSamples:
    """Area-weighted uniform samples on the surface; deterministic for a fixed seed."""
    if count <= 0:
        empty = np.zeros((0, 3))
        return SurfaceSamples(empty, empty.copy(), np.zeros(0, dtype=np.int64))
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(mesh.areas)
    tri = np.searchsorted(cdf, rng.random(count) * cdf[-1], side="right")
    tri = np.minimum(tri, len(mesh.triangles) - 1)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    c = mesh.corners[tri]
    points = (1 - r1)[:, None] * c[:, 0] + (r1 * (1 - r2))[:, None] * c[:, 1] + (r1 * r2)[:, None] * c[:, 2]
    return SurfaceSamples(points, mesh.normals[tri].copy(), tri.astype(np.int64))


# --------------------------------------------------------------------------- mass

@dataclass(frozen=True)
class MassProperties:
    mass: float
    centroid: np.ndarray
    volume: float
    closed: bool

    @property
    def surface_fallback(self) -> bool:
        """True when the mesh was open and the centroid is area-weighted."""
        return not self.closed


def mass_properties(mesh: TriangleMesh, density: float = 1000.0) -> MassProperties:
    """Mass and centroid by divergence-theorem accumulation over the triangles.

    Open meshes fall back to the area-weighted surface centroid (with
    ``closed=False``) and a mass of ``density * area`` is not meaningful, so the
    reported mass is ``nan``.
    """
    c = mesh.corners
    if not mesh.watertight:
        log.warning("mesh is not watertight; using surface centroid")
        centroid = (mesh.areas[:, None] * c.mean(axis=1)).sum(axis=0) / mesh.areas.sum()
        return MassProperties(float("nan"), centroid, float("nan"), False)
    vol6 = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2]))
    volume = vol6.sum() / 6.0
    if volume <= 0:
        raise MeshError(f"signed volume {volume:.3e} is not positive; triangle normals are probably flipped")
    centroid = (vol6[:, None] * c.sum(axis=1)).sum(axis=0) / (24.0 * volume)
    return MassProperties(float(density * volume), centroid, float(volume), True)
