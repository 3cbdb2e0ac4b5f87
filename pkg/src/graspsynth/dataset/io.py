"""Readers and writers for grasp sets, scenes, labeled clouds, encoded targets and manifests.

Structured records are versioned JSON; bulk per-point data is binary
little-endian PLY. All writes are atomic (temporary file + rename) and contain
no timestamps, so identical inputs give identical bytes.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numba as nb
import numpy as np

from ..geom.mesh import MeshParseError, Pose, read_ply_elements
from ..grasp import Grasp
from ..labeler import LabeledCloud
from ..sampler import ObjectGraspSet
from ..scene import BinModel, ObjectInstance, Scene

FORMAT_VERSION = "1.0"


class FormatError(ValueError):
    """Unreadable, tampered or incompatible dataset file."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


# --------------------------------------------------------------------------- low level

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


@nb.njit(cache=True)
def _fnv1a(data, h, prime):
    for b in data:
        h ^= np.uint64(b)
        h *= prime
    return h


def fnv1a64(data: bytes) -> str:
    """64-bit FNV-1a hash as 16 hex digits."""
    arr = np.frombuffer(data, dtype=np.uint8)
    return f"{int(_fnv1a(arr, _FNV_OFFSET, _FNV_PRIME)):016x}"


def file_checksum(path) -> str:
    return fnv1a64(Path(path).read_bytes())


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, payload: dict) -> None:
    body = {"format_version": FORMAT_VERSION, **payload}
    atomic_write(path, (json.dumps(body, indent=1, sort_keys=True, allow_nan=False) + "\n").encode())


def read_json(path, kind: str | None = None) -> dict:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(path, f"cannot parse JSON ({exc})") from None
    _check_version(path, payload.get("format_version"))
    if kind is not None and payload.get("kind") != kind:
        raise FormatError(path, f"expected a {kind!r} file, found {payload.get('kind')!r}")
    return payload


def _check_version(path, version):
    if not isinstance(version, str):
        raise FormatError(path, "missing format_version")
    major = version.split(".")[0]
    if major != FORMAT_VERSION.split(".")[0]:
        raise FormatError(path, f"unsupported format_version {version} (reader supports {FORMAT_VERSION})")


def _vec(a) -> list:
    return [float(x) for x in np.asarray(a, dtype=np.float64).ravel()]


def _ply_bytes(fields, arrays, count: int, comments=()) -> bytes:
    names = {"i1": "char", "u1": "uchar", "i4": "int", "f4": "float", "f8": "double"}
    dt = np.dtype([(f, "<" + t) for f, t in fields])
    rec = np.zeros(count, dtype=dt)
    for f, _ in fields:
        rec[f] = arrays[f]
    head = ["ply", "format binary_little_endian 1.0"]
    head += [f"comment {c}" for c in comments]
    head += [f"element vertex {count}"]
    head += [f"property {names[t]} {f}" for f, t in fields]
    head += ["end_header"]
    return ("\n".join(head) + "\n").encode("ascii") + rec.tobytes()


def _read_ply(path, fields):
    path = Path(path)
    try:
        data = path.read_bytes()
        elements = read_ply_elements(path, data)
    except (OSError, MeshParseError) as exc:
        raise FormatError(path, str(exc)) from None
    text = data[:data.find(b"end_header")].decode("ascii", "replace")
    version = next((ln.split()[2] for ln in text.splitlines() if ln.startswith("comment format_version")), None)
    _check_version(path, version)
    v = elements.get("vertex")
    if v is None or list(v.dtype.names) != [f for f, _ in fields]:
        raise FormatError(path, "unexpected PLY property layout")
    for f, t in fields:
        if v.dtype[f] != np.dtype("<" + t):
            raise FormatError(path, f"property {f} has type {v.dtype[f]}, expected {t}")
    expected = data.find(b"end_header\n") + len(b"end_header\n") + v.dtype.itemsize * len(v)
    if expected != len(data):
        raise FormatError(path, f"payload size {len(data)} bytes, expected {expected}")
    return v


# --------------------------------------------------------------------------- grasps

def grasp_to_dict(g: Grasp) -> dict:
    return {"center": _vec(g.center), "approach": _vec(g.approach), "closing": _vec(g.closing),
            "width": float(g.width), "c1": _vec(g.c1), "c2": _vec(g.c2), "quality": float(g.quality),
            "meta": g.meta}


def grasp_from_dict(d: dict) -> Grasp:
    return Grasp(np.array(d["center"]), np.array(d["approach"]), np.array(d["closing"]), d["width"],
                 np.array(d["c1"]), np.array(d["c2"]), d["quality"], dict(d.get("meta", {})))


def write_grasp_set(path, gs: ObjectGraspSet, extra: dict | None = None) -> None:
    write_json(path, {
        "kind": "grasp_set",
        "object_id": gs.object_id,
        "counts": {k: int(v) for k, v in gs.counts.items()},
        "positives": [grasp_to_dict(g) for g in gs.positives],
        "negatives": [grasp_to_dict(g) for g in gs.negatives],
        "negative_points": [_vec(p) for p in gs.negative_points],
        **(extra or {}),
    })


def read_grasp_set(path) -> ObjectGraspSet:
    d = read_json(path, "grasp_set")
    try:
        pts = np.array(d["negative_points"], dtype=np.float64).reshape(-1, 3)
        return ObjectGraspSet(d["object_id"], [grasp_from_dict(g) for g in d["positives"]],
                              [grasp_from_dict(g) for g in d["negatives"]], pts, dict(d["counts"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(path, f"malformed grasp set ({exc})") from None


# --------------------------------------------------------------------------- scenes

def scene_to_dict(scene: Scene) -> dict:
    return {
        "kind": "scene",
        "seed": int(scene.seed),
        "requested": int(scene.requested),
        "warnings": list(scene.warnings),
        "bin": {"extents": list(scene.bin.extents), "wall": scene.bin.wall},
        "instances": [{"object_id": inst.object_id, "rotation": [_vec(row) for row in inst.pose.rotation],
                       "translation": _vec(inst.pose.translation)} for inst in scene.instances],
    }


def scene_from_dict(d: dict) -> Scene:
    bin_model = BinModel(tuple(d["bin"]["extents"]), d["bin"]["wall"])
    instances = [ObjectInstance(i["object_id"], Pose(np.array(i["rotation"]), np.array(i["translation"])))
                 for i in d["instances"]]
    return Scene(bin_model, instances, int(d["seed"]), int(d.get("requested", len(instances))),
                 list(d.get("warnings", [])))


def write_scene(path, scene: Scene) -> None:
    write_json(path, scene_to_dict(scene))


def read_scene(path) -> Scene:
    d = read_json(path, "scene")
    try:
        return scene_from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(path, f"malformed scene ({exc})") from None


# --------------------------------------------------------------------------- labeled clouds

CLOUD_FIELDS = [("x", "f4"), ("y", "f4"), ("z", "f4"), ("mask", "i1"),
                ("nx", "f4"), ("ny", "f4"), ("nz", "f4"), ("rx", "f4"), ("ry", "f4"), ("rz", "f4"),
                ("width", "f4"), ("quality", "f4"), ("grasp_ref", "i4")]


def write_labeled_cloud(path, cloud: LabeledCloud) -> None:
    n = len(cloud)
    arrays = {"mask": cloud.mask, "width": cloud.width, "quality": cloud.quality, "grasp_ref": cloud.grasp_ref}
    for i, k in enumerate("xyz"):
        arrays[k] = cloud.points[:, i]
        arrays["n" + k] = cloud.approach[:, i]
        arrays["r" + k] = cloud.closing[:, i]
    atomic_write(path, _ply_bytes(CLOUD_FIELDS, arrays, n, [f"format_version {FORMAT_VERSION}"]))


def read_labeled_cloud(path) -> LabeledCloud:
    v = _read_ply(path, CLOUD_FIELDS)
    stack = lambda *ks: np.ascontiguousarray(np.stack([v[k] for k in ks], axis=1).astype(np.float32))  # noqa: E731
    return LabeledCloud(stack("x", "y", "z"), v["mask"].astype(np.int8), stack("nx", "ny", "nz"),
                        stack("rx", "ry", "rz"), v["width"].astype(np.float32), v["quality"].astype(np.float32),
                        v["grasp_ref"].astype(np.int32))


# --------------------------------------------------------------------------- encoded targets

TARGET_NAMES = ("x", "y", "z", "width", "theta1", "theta2", "theta3")
TARGET_FIELDS = ([("valid", "u1")] + [(f"bin_{k}", "i4") for k in TARGET_NAMES]
                 + [(f"res_{k}", "f8") for k in TARGET_NAMES])


def write_targets(path, bins, res, valid) -> None:
    bins = np.asarray(bins, dtype=np.int32).reshape(-1, len(TARGET_NAMES))
    res = np.asarray(res, dtype=np.float64).reshape(-1, len(TARGET_NAMES))
    arrays = {"valid": np.asarray(valid, dtype=np.uint8)}
    for j, k in enumerate(TARGET_NAMES):
        arrays[f"bin_{k}"] = bins[:, j]
        arrays[f"res_{k}"] = res[:, j]
    atomic_write(path, _ply_bytes(TARGET_FIELDS, arrays, len(bins), [f"format_version {FORMAT_VERSION}"]))


def read_targets(path):
    v = _read_ply(path, TARGET_FIELDS)
    bins = np.stack([v[f"bin_{k}"] for k in TARGET_NAMES], axis=1).astype(np.int32)
    res = np.stack([v[f"res_{k}"] for k in TARGET_NAMES], axis=1).astype(np.float64)
    return bins, res, v["valid"].astype(bool)


# --------------------------------------------------------------------------- manifests

def write_manifest(root, payload: dict, name: str = "manifest.json") -> dict:
    """Write a dataset manifest with checksums of every listed payload file.

    ``payload["files"]`` is a list of paths relative to ``root``.
    """
    root = Path(root)
    files = sorted(payload.get("files", []))
    checksums = {f: file_checksum(root / f) for f in files}
    body = {**payload, "kind": "dataset_manifest", "files": files, "checksums": checksums}
    write_json(root / name, body)
    return body


def read_manifest(root, name: str = "manifest.json") -> dict:
    return read_json(Path(root) / name, "dataset_manifest")


def verify_checksums(root, manifest: dict) -> list:
    """Names of files whose checksum does not match (or that are missing)."""
    bad = []
    for f, expected in sorted(manifest.get("checksums", {}).items()):
        p = Path(root) / f
        if not p.exists() or file_checksum(p) != expected:
            bad.append(f)
    return bad
