"""Dataset stages on an output directory, plus the dataset validator.

Layout of a dataset directory::

    config.json                 resolved run configuration
    objects/library.json        library manifest; objects/meshes/<id>.obj
    grasps/<id>.json            single-object grasp sets
    scenes/<sid>.json           composed scenes
    clouds/<sid>.ply            cropped, downsampled point clouds (unlabeled)
    labels/<sid>.ply, .json     labeled clouds and per-scene label summaries
    targets/<sid>.ply           encoded regression targets
    viz/<sid>.ply               colored visualization
    stats.json, stats.txt       dataset statistics
    manifest.json               splits, seeds, config snapshot, checksums
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .camera import (CameraIntrinsics, NoiseModel, crop_to_bin, default_camera_pose, depth_to_cloud, downsample,
                     render_depth)
from .collision import check_collision_scene, closing_box, gripper_boxes
from .config import ConfigError, RunConfig, derive_seed
from .dataset import io
from .dataset.stats import dataset_stats, format_stats
from .dataset.viz import export_viz
from .encoding import AngleBinSpec, EncodedGrasp, EncodingSpecs, LinearBinSpec, decode_grasp, encode_cloud
from .geom.mesh import MeshError, load_mesh
from .grasp import GraspDistanceWeights, grasp_distance, grasp_frame
from .labeler import MASK_NEGATIVE, MASK_POSITIVE, MASK_UNLABELED, LabeledCloud, broadcast_labels, scene_grasp_filter
from .objects import ObjectModel, builtin_library
from .quality import QualityConfig
from .sampler import SamplerConfig, generate_grasps
from .scene import BinModel, ComposerConfig, SceneGeometry, compose_scene, instances_inside_bin, max_penetration, \
    transform_annotations

log = logging.getLogger(__name__)

PENETRATION_LIMIT = 1e-3


class StageError(RuntimeError):
    """A stage's inputs are missing or unreadable."""


# --------------------------------------------------------------------------- helpers

def scene_ids(cfg: RunConfig) -> list:
    return [f"scene_{i:04d}" for i in range(cfg.scenes)]


class ItemFailures(RuntimeError):
    """Some work items of a stage failed; the others completed."""

    def __init__(self, failures):
        self.failures = failures
        super().__init__("; ".join(f"{item}: {err}" for item, err in failures))


def _guarded(fn, cfg_dict, out, item):
    try:
        return True, fn(cfg_dict, out, item)
    except StageError:
        raise
    except Exception as exc:  # reported per item, stage continues
        return False, f"{type(exc).__name__}: {exc}"


def _map(fn, items, cfg: RunConfig, out):
    """Run ``fn`` over independent items, in worker processes when ``jobs > 1``.

    Results keep item order, so output never depends on scheduling.
    """
    items = list(items)
    n = len(items)
    args = ([fn] * n, [cfg.to_dict()] * n, [str(out)] * n, items)
    if cfg.jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            results = list(ex.map(_guarded, *args))
    else:
        results = list(map(_guarded, *args))
    failures = [(it, r) for it, (ok, r) in zip(items, results) if not ok]
    for it, err in failures:
        log.error("%s failed: %s", it, err)
    if failures:
        raise ItemFailures(failures)
    return [r for _, r in results]


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise StageError(f"{path} missing; run the {stage} stage first")
    return path


def _obj_text(mesh) -> bytes:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    return ("\n".join(lines) + "\n").encode()


def encoding_specs(cfg: RunConfig) -> EncodingSpecs:
    e = cfg.encoding
    gr = cfg.gripper_model()
    pos = LinearBinSpec(e.position_bin, e.position_range, int(round(2 * e.position_range / e.position_bin)))
    return EncodingSpecs(
        theta1=AngleBinSpec(0.0, 2 * np.pi / e.theta1_bins, e.theta1_bins),
        theta2=AngleBinSpec(0.0, (np.pi / 2) / e.theta2_bins, e.theta2_bins),
        theta3=AngleBinSpec(-np.pi / 2, np.pi / e.theta3_bins, e.theta3_bins),
        position=pos,
        width=LinearBinSpec(gr.max_width / e.width_bins, gr.max_width / 2, e.width_bins),
    )


def bin_model(cfg: RunConfig) -> BinModel:
    return BinModel(tuple(cfg.scene.bin_extents), cfg.scene.bin_wall)


def intrinsics(cfg: RunConfig) -> CameraIntrinsics:
    c = cfg.camera
    return CameraIntrinsics(c.fx, c.fy, c.width / 2, c.height / 2, c.width, c.height)


# --------------------------------------------------------------------------- library

def run_library(cfg: RunConfig, out) -> list:
    """Materialize the object library as OBJ meshes plus a library manifest."""
    out = Path(out)
    if cfg.library is None:
        objs = builtin_library(cfg.objects, derive_seed(cfg.seed, "library"), cfg.sampler.friction)
        entries = [(o, dict(o.source)) for o in objs]
    else:
        entries = _load_user_library(Path(cfg.library))
    records = []
    for obj, source in entries:
        rel = f"meshes/{obj.object_id}.obj"
        io.atomic_write(out / "objects" / rel, _obj_text(obj.mesh))
        records.append({"id": obj.object_id, "mesh": rel, "format": "obj", "scale": 1.0,
                        "density": obj.density, "friction": obj.friction, "source": source})
    io.write_json(out / "objects" / "library.json",
                  {"kind": "library", "gripper": cfg.gripper, "objects": records})
    return load_library(out)


def _load_user_library(path: Path) -> list:
    d = io.read_json(path)
    out, seen = [], set()
    for rec in d.get("objects", []):
        oid = rec["id"]
        if oid in seen:
            raise ConfigError(f"{path}: duplicate object id {oid!r}")
        seen.add(oid)
        mesh_path = (path.parent / rec["mesh"]).resolve()
        try:
            mesh = load_mesh(mesh_path, rec.get("format"), float(rec.get("scale", 1.0)))
        except (OSError, MeshError) as exc:
            raise ConfigError(f"{path}: object {oid!r}: {exc}") from None
        obj = ObjectModel(oid, mesh, float(rec.get("friction", 0.3)), float(rec.get("density", 1000.0)))
        out.append((obj, {"mesh": str(rec["mesh"]), "scale": float(rec.get("scale", 1.0))}))
    if not out:
        raise ConfigError(f"{path}: library is empty")
    return out


def load_library(out) -> list:
    path = _need(Path(out) / "objects" / "library.json", "library")
    d = io.read_json(path, "library")
    objs = []
    for rec in d["objects"]:
        mesh = load_mesh(path.parent / rec["mesh"], rec.get("format"), float(rec.get("scale", 1.0)))
        objs.append(ObjectModel(rec["id"], mesh, float(rec["friction"]), float(rec["density"]),
                                dict(rec.get("source", {}))))
    return objs


# --------------------------------------------------------------------------- grasps

def _grasp_worker(cfg_dict, out, object_id):
    cfg = RunConfig.from_dict(cfg_dict)
    obj = next(o for o in load_library(out) if o.object_id == object_id)
    s = cfg.sampler
    scfg = SamplerConfig(n_points=s.n_points, directions=s.directions, friction=obj.friction,
                         seed=derive_seed(cfg.seed, "grasps", object_id), approach_trials=s.approach_trials,
                         clearance=s.clearance, nms_threshold=s.nms_threshold)
    qcfg = QualityConfig(cone_edges=cfg.quality.cone_edges, torsion_radius=cfg.quality.torsion_radius,
                         backend=cfg.quality.backend)
    gs = generate_grasps(obj, cfg.gripper_model(), scfg, qcfg)
    io.write_grasp_set(Path(out) / "grasps" / f"{object_id}.json", gs)
    return object_id, gs.counts


def run_grasps(cfg: RunConfig, out) -> dict:
    ids = [o.object_id for o in load_library(out)]
    return dict(_map(_grasp_worker, ids, cfg, out))


def load_grasp_sets(out, ids) -> dict:
    return {i: io.read_grasp_set(_need(Path(out) / "grasps" / f"{i}.json", "gen-grasps")) for i in ids}


# --------------------------------------------------------------------------- scenes

def _compose_worker(cfg_dict, out, sid):
    cfg = RunConfig.from_dict(cfg_dict)
    lib = load_library(out)
    rng = np.random.default_rng(derive_seed(cfg.seed, "scene-size", sid))
    m = int(rng.integers(cfg.scene.min_objects, cfg.scene.max_objects + 1))
    scene = compose_scene(lib, m, bin_model(cfg), derive_seed(cfg.seed, "compose", sid),
                          ComposerConfig(settle_rounds=cfg.scene.settle_rounds))
    io.write_scene(Path(out) / "scenes" / f"{sid}.json", scene)
    return sid, len(scene.instances)


def run_compose(cfg: RunConfig, out) -> dict:
    load_library(out)
    return dict(_map(_compose_worker, scene_ids(cfg), cfg, out))


def _render_worker(cfg_dict, out, sid):
    cfg = RunConfig.from_dict(cfg_dict)
    out = Path(out)
    scene = io.read_scene(_need(out / "scenes" / f"{sid}.json", "compose"))
    geo = SceneGeometry(scene, load_library(out))
    c = cfg.camera
    noise = NoiseModel(c.noise_sigma, c.dropout)
    pose = default_camera_pose(c.camera_height)
    intr = intrinsics(cfg)
    depth = render_depth(geo, intr, pose, noise, derive_seed(cfg.seed, "render", sid))
    pts = depth_to_cloud(depth, intr, pose)
    pts = crop_to_bin(pts, scene.bin, c.crop_margin, c.remove_bin)
    ds = downsample(pts, c.points, derive_seed(cfg.seed, "downsample", sid))
    io.write_labeled_cloud(out / "clouds" / f"{sid}.ply", LabeledCloud.unlabeled(ds.points))
    return sid, {"valid_pixels": int(depth.valid.sum()), "cropped": int(len(pts)), "resampled": ds.resampled}


def run_render(cfg: RunConfig, out) -> dict:
    return dict(_map(_render_worker, scene_ids(cfg), cfg, out))


def scene_annotations(out, scene):
    ids = sorted({inst.object_id for inst in scene.instances})
    return transform_annotations(scene, load_grasp_sets(out, ids))


def _label_worker(cfg_dict, out, sid):
    cfg = RunConfig.from_dict(cfg_dict)
    out = Path(out)
    scene = io.read_scene(_need(out / "scenes" / f"{sid}.json", "compose"))
    cloud = io.read_labeled_cloud(_need(out / "clouds" / f"{sid}.ply", "render"))
    geo = SceneGeometry(scene, load_library(out))
    ann = scene_annotations(out, scene)
    res = scene_grasp_filter(geo, ann, cfg.gripper_model(), cfg.labeling.collision_margin)
    labeled = broadcast_labels(cloud.points.astype(np.float64), ann.grasps, res.p_pos, res.p_neg,
                               cfg.labeling.radius)
    io.write_labeled_cloud(out / "labels" / f"{sid}.ply", labeled)
    pos = [ann.grasps[i] for i in res.positive_refs]
    summary = {
        "kind": "label_summary",
        "scene_id": sid,
        "n_scene_grasps": len(ann.grasps),
        "positive_refs": res.positive_refs,
        "collided_refs": res.collided_refs,
        "n_positive_grasps": len(res.positive_refs),
        "n_collided_grasps": len(res.collided_refs),
        "n_unsuitable_points": int(len(ann.negative_points)),
        "positive_widths": [float(g.width) for g in pos],
        "positive_qualities": [float(g.quality) for g in pos],
        "mask_counts": {"positive": int((labeled.mask == MASK_POSITIVE).sum()),
                        "negative": int((labeled.mask == MASK_NEGATIVE).sum()),
                        "unlabeled": int((labeled.mask == MASK_UNLABELED).sum())},
    }
    io.write_json(out / "labels" / f"{sid}.json", summary)
    return sid, summary["mask_counts"]


def run_label(cfg: RunConfig, out) -> dict:
    return dict(_map(_label_worker, scene_ids(cfg), cfg, out))


def _encode_worker(cfg_dict, out, sid):
    cfg = RunConfig.from_dict(cfg_dict)
    out = Path(out)
    scene = io.read_scene(_need(out / "scenes" / f"{sid}.json", "compose"))
    labeled = io.read_labeled_cloud(_need(out / "labels" / f"{sid}.ply", "label"))
    ann = scene_annotations(out, scene)
    bins, res, ok = encode_cloud(labeled.points.astype(np.float64), ann.grasps, labeled.grasp_ref, labeled.mask,
                                 encoding_specs(cfg))
    io.write_targets(out / "targets" / f"{sid}.ply", bins, res, ok)
    return sid, int(ok.sum())


def run_encode(cfg: RunConfig, out) -> dict:
    return dict(_map(_encode_worker, scene_ids(cfg), cfg, out))


def run_stats(cfg: RunConfig, out) -> dict:
    out = Path(out)
    summaries = [io.read_json(_need(out / "labels" / f"{sid}.json", "label"), "label_summary")
                 for sid in scene_ids(cfg)]
    report = dataset_stats(summaries)
    io.write_json(out / "stats.json", {"kind": "stats", **report})
    io.atomic_write(out / "stats.txt", (format_stats(report) + "\n").encode())
    return report


def _viz_worker(cfg_dict, out, sid):
    cfg = RunConfig.from_dict(cfg_dict)
    out = Path(out)
    scene = io.read_scene(_need(out / "scenes" / f"{sid}.json", "compose"))
    labeled = io.read_labeled_cloud(_need(out / "labels" / f"{sid}.ply", "label"))
    summary = io.read_json(out / "labels" / f"{sid}.json", "label_summary")
    ann = scene_annotations(out, scene)
    pos = [ann.grasps[i] for i in summary["positive_refs"]]
    export_viz(out / "viz" / f"{sid}.ply", labeled, pos, cfg.viz_top_k, cfg.gripper_model())
    return sid


def run_viz(cfg: RunConfig, out) -> list:
    return _map(_viz_worker, scene_ids(cfg), cfg, out)


# --------------------------------------------------------------------------- manifest

def write_dataset_manifest(cfg: RunConfig, out) -> dict:
    out = Path(out)
    files = sorted(str(p.relative_to(out)) for p in out.rglob("*")
                   if p.is_file() and p.name != "manifest.json" and not p.name.startswith("."))
    obj_ids = [o["id"] for o in io.read_json(out / "objects" / "library.json", "library")["objects"]]
    sids = scene_ids(cfg)
    rng = np.random.default_rng(derive_seed(cfg.seed, "split"))
    obj_perm = [obj_ids[i] for i in rng.permutation(len(obj_ids))]
    n_train = max(1, int(round(cfg.train_fraction * len(obj_ids))))
    scene_perm = [sids[i] for i in rng.permutation(len(sids))]
    n_train_s = int(round(cfg.train_fraction * len(sids)))
    payload = {
        "tool": "graspsynth",
        "tool_version": __version__,
        "config": cfg.snapshot(),
        "seeds": {"master": cfg.seed},
        "splits": {"train_objects": sorted(obj_perm[:n_train]), "test_objects": sorted(obj_perm[n_train:]),
                   "train_scenes": sorted(scene_perm[:n_train_s]), "test_scenes": sorted(scene_perm[n_train_s:])},
        "scenes": sids,
        "files": files,
    }
    return io.write_manifest(out, payload)


def run_pipeline(cfg: RunConfig, out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", {"kind": "config", **cfg.snapshot()})
    steps = [("library", run_library), ("gen-grasps", run_grasps), ("compose", run_compose),
             ("render", run_render), ("label", run_label), ("encode", run_encode), ("stats", run_stats),
             ("export-viz", run_viz)]
    results = {}
    for name, fn in steps:
        log.info("stage %s", name)
        results[name] = fn(cfg, out)
    write_dataset_manifest(cfg, out)
    return results


# --------------------------------------------------------------------------- validation

class Violations:
    def __init__(self):
        self.items = []

    def add(self, where, message):
        self.items.append((str(where), message))

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


def validate_dataset(out, penetration_samples: int = 1000) -> Violations:
    """Re-check every file of a dataset; returns the list of violations."""
    out = Path(out)
    v = Violations()
    try:
        manifest = io.read_manifest(out)
    except io.FormatError as exc:
        v.add("manifest.json", str(exc))
        return v
    for name in io.verify_checksums(out, manifest):
        v.add(name, "checksum mismatch or file missing")
    if len(v):
        return v
    try:
        cfg = RunConfig.from_dict(manifest["config"]).validate()
    except ConfigError as exc:
        v.add("manifest.json", f"invalid config snapshot: {exc}")
        return v
    gripper = cfg.gripper_model()
    try:
        lib = load_library(out)
    except (io.FormatError, StageError, MeshError, KeyError) as exc:
        v.add("objects/library.json", str(exc))
        return v
    ids = [o.object_id for o in lib]
    if len(set(ids)) != len(ids):
        v.add("objects/library.json", "duplicate object ids")
    sets = {}
    weights = GraspDistanceWeights()
    for oid in ids:
        where = f"grasps/{oid}.json"
        try:
            gs = io.read_grasp_set(out / where)
        except (io.FormatError, OSError) as exc:
            v.add(where, str(exc))
            continue
        sets[oid] = gs
        for k, g in enumerate(gs.positives):
            try:
                g.validate(gripper)
            except ValueError as exc:
                v.add(where, f"positive {k}: {exc}")
            if not g.quality > 0:
                v.add(where, f"positive {k} has quality {g.quality}")
        pos = gs.positives
        for a in range(len(pos)):
            for b in range(a + 1, len(pos)):
                if grasp_distance(pos[a], pos[b], weights) <= cfg.sampler.nms_threshold:
                    v.add(where, f"positives {a} and {b} closer than the NMS threshold")
    specs = encoding_specs(cfg)
    summaries = []
    for sid in scene_ids(cfg):
        _validate_scene(out, sid, cfg, lib, sets, gripper, specs, v, summaries, penetration_samples)
    if len(summaries) == len(scene_ids(cfg)):
        try:
            stats = io.read_json(out / "stats.json", "stats")
            h = stats["width_histogram"]
            total = sum(len(s["positive_widths"]) for s in summaries)
            if sum(h["counts"]) + h["overflow"] != total or h["overflow"] or len(h["counts"]) != 8:
                v.add("stats.json", "width histogram inconsistent with label summaries")
        except (io.FormatError, KeyError) as exc:
            v.add("stats.json", str(exc))
    return v


def _validate_scene(out, sid, cfg, lib, sets, gripper, specs, v, summaries, penetration_samples):
    where = f"scenes/{sid}.json"
    try:
        scene = io.read_scene(out / where)
        geo = SceneGeometry(scene, lib)
    except (io.FormatError, OSError, KeyError) as exc:
        v.add(where, str(exc))
        return
    if not instances_inside_bin(geo, 1e-6):
        v.add(where, "instance outside the bin interior")
    pen = max_penetration(geo, penetration_samples, 0)
    if pen > PENETRATION_LIMIT:
        v.add(where, f"penetration {pen:.4g} m exceeds {PENETRATION_LIMIT} m")
    try:
        ann = transform_annotations(scene, sets)
    except KeyError as exc:
        v.add(where, str(exc))
        return
    lwhere = f"labels/{sid}"
    try:
        labeled = io.read_labeled_cloud(out / f"{lwhere}.ply")
        summary = io.read_json(out / f"{lwhere}.json", "label_summary")
        bins, res, ok = io.read_targets(out / f"targets/{sid}.ply")
    except (io.FormatError, OSError) as exc:
        v.add(lwhere, str(exc))
        return
    summaries.append(summary)
    pos_refs = set(summary["positive_refs"])
    n = len(ann.grasps)
    if summary["n_scene_grasps"] != n or pos_refs & set(summary["collided_refs"]) \
            or len(pos_refs) + len(summary["collided_refs"]) != n:
        v.add(f"{lwhere}.json", "grasp partition does not match the scene grasps")
    for i in sorted(pos_refs):
        g = ann.grasps[i]
        frame = grasp_frame(g, gripper)
        rep = check_collision_scene(gripper_boxes(gripper, frame, g.width), geo, int(ann.grasp_instance[i]),
                                    closing_box(gripper, frame, g.width), cfg.labeling.collision_margin)
        if rep.collided:
            v.add(f"{lwhere}.json", f"positive grasp {i} collides in the scene")
    m = labeled.mask
    if not np.isin(m, (MASK_NEGATIVE, MASK_POSITIVE, MASK_UNLABELED)).all():
        v.add(f"{lwhere}.ply", "mask values outside {0, 1, 2}")
    posm = m == MASK_POSITIVE
    if (labeled.quality[posm] <= 0).any():
        v.add(f"{lwhere}.ply", "positive point with nonpositive quality")
    if posm.any() and not np.isin(labeled.grasp_ref[posm], sorted(pos_refs)).all():
        v.add(f"{lwhere}.ply", "positive point not referencing a collision-free grasp")
    unl = m == MASK_UNLABELED
    if (labeled.grasp_ref[unl] != -1).any() or labeled.quality[unl].any() or labeled.width[unl].any():
        v.add(f"{lwhere}.ply", "unlabeled point carries a label")
    if (labeled.width > gripper.max_width + 1e-6).any():
        v.add(f"{lwhere}.ply", "label width above the gripper opening")
    twhere = f"targets/{sid}.ply"
    if len(bins) != len(labeled):
        v.add(twhere, "row count differs from the labeled cloud")
        return
    if (ok & ~posm).any():
        v.add(twhere, "target on a non-positive point")
    if ok.any() and (np.abs(res[ok]) > 0.5 + 1e-12).any():
        v.add(twhere, "residual outside [-0.5, 0.5]")
    counts = [specs.position.count] * 3 + [specs.width.count, specs.theta1.count, specs.theta2.count,
                                            specs.theta3.count]
    if ok.any() and ((bins[ok] < 0) | (bins[ok] >= np.array(counts))).any():
        v.add(twhere, "bin index out of range")
    for i in np.flatnonzero(ok):
        g = ann.grasps[int(labeled.grasp_ref[i])]
        dec = decode_grasp(labeled.points[i].astype(np.float64), EncodedGrasp.from_arrays(bins[i], res[i]), specs)
        if (np.abs(dec.center - g.center).max() > 1e-8 or abs(dec.width - g.width) > 1e-8
                or np.abs(dec.approach - g.approach).max() > 1e-6
                or min(np.abs(dec.closing - g.closing).max(), np.abs(dec.closing + g.closing).max()) > 1e-6):
            v.add(twhere, f"row {i} does not decode to its grasp")
            break

