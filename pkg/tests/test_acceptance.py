"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from graspsynth import pipeline as pl
from graspsynth.camera import NoiseModel, default_camera_pose, depth_to_cloud, project, render_depth
from graspsynth.collision import check_collision_scene, closing_box, gripper_boxes
from graspsynth.dataset import io
from graspsynth.encoding import EncodingSpecs, angles_to_directions, decode_grasp, encode_grasp
from graspsynth.geom import primitives
from graspsynth.geom.mesh import sample_surface
from graspsynth.grasp import Grasp, grasp_distance, grasp_frame, nms
from graspsynth.labeler import ContactSet, broadcast_labels
from graspsynth.objects import ObjectModel, builtin_library
from graspsynth.quality import QualityConfig, ferrari_canny, grasp_wrenches, is_force_closure
from graspsynth.sampler import find_antipodal_contact, is_antipodal
from graspsynth.scene import SceneGeometry, compose_scene
from helpers import convex_penetration, occluded_points, random_grasp, reference_nms, surface_error

RESULTS = {}


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        RESULTS[n] = ok
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok
    return emit


# --------------------------------------------------------------------------- 1

def test_1_ferrari_canny(report):
    W = np.vstack([np.eye(6), -np.eye(6)])
    q_cross = ferrari_canny(W)
    ok_cross = abs(q_cross - 1 / np.sqrt(6)) <= 1e-3
    rng = np.random.default_rng(11)
    zeros = 0
    for _ in range(100):
        a = rng.normal(size=6)
        S = rng.normal(size=(int(rng.integers(6, 40)), 6))
        S[S @ a < 0] *= -1  # every wrench on one side of a hyperplane through the origin
        zeros += ferrari_canny(S) == 0.0
    cfg = QualityConfig(cone_edges=8, torque_scale=1 / 0.03)
    times = []
    for _ in range(200):
        c1, c2 = rng.normal(size=(2, 3)) * 0.02
        n1, n2 = rng.normal(size=(2, 3))
        n1 /= np.linalg.norm(n1)
        n2 /= np.linalg.norm(n2)
        t0 = time.perf_counter()
        ferrari_canny(grasp_wrenches(c1, n1, c2, n2, np.zeros(3), 0.3, cfg), cfg)
        times.append(time.perf_counter() - t0)
    t_med, t_max = float(np.median(times)), float(np.max(times))
    ok = ok_cross and zeros == 100 and t_med < 0.05
    report(1, ok, f"Q(cross-polytope)={q_cross:.6f} (1/sqrt6={1 / np.sqrt(6):.6f}), "
                  f"{zeros}/100 half-space sets Q=0, runtime median {1e3 * t_med:.2f} ms max {1e3 * t_max:.2f} ms")
    assert ok


# --------------------------------------------------------------------------- 2

def test_2_antipodal_matches_force_closure(report):
    gamma = 0.3
    cone = np.arctan(gamma)
    rng = np.random.default_rng(12)
    objs = [ObjectModel("sphere", primitives.icosphere(0.02, 3)),
            ObjectModel("box", primitives.box([0.03, 0.04, 0.05]))]
    total = agree = 0
    off_band = 0
    for k in range(1000):
        obj = objs[k % 2]
        cfg = QualityConfig(torque_scale=1 / obj.radius)
        while True:
            s = sample_surface(obj.mesh, 1, int(rng.integers(2**63)))
            c1, n1 = s.points[0], s.normals[0]
            d = -n1 + rng.normal(size=3) * 0.35
            d /= np.linalg.norm(d)
            if np.degrees(np.arccos(np.clip(d @ -n1, -1, 1))) > 30:
                continue
            hit = find_antipodal_contact(obj.bvh, c1, d)
            if hit is not None:
                break
        c2, n2 = hit
        a = is_antipodal(c1, n1, c2, n2, gamma)
        fc = is_force_closure(grasp_wrenches(c1, n1, c2, n2, obj.centroid, gamma, cfg), cfg)
        total += 1
        if a == fc:
            agree += 1
            continue
        u = (c2 - c1) / np.linalg.norm(c2 - c1)
        ang1 = np.arccos(np.clip(-(u @ n1), -1, 1))
        ang2 = np.arccos(np.clip(u @ n2, -1, 1))
        if min(abs(ang1 - cone), abs(ang2 - cone)) > np.radians(0.5):
            off_band += 1
    rate = agree / total
    ok = rate >= 0.995 and off_band == 0
    report(2, ok, f"agreement {agree}/{total} ({100 * rate:.2f}%), {total - agree} disagreements, "
                  f"{off_band} outside the 0.5 deg cone-boundary band")
    assert ok


# --------------------------------------------------------------------------- 3

def _frame_pair(d, alpha, beta):
    """Two grasps whose midpoints are ``d`` apart, closing axes ``alpha`` apart and
    approach axes ``beta`` apart."""
    n = np.array([0.0, 0.0, -1.0])
    r = np.array([1.0, 0.0, 0.0])
    g1 = Grasp(np.zeros(3), n, r, 0.02, -0.005 * r, 0.005 * r)
    r2 = np.array([np.cos(alpha), np.sin(alpha), 0.0])
    n2 = np.cos(beta) * n + np.sin(beta) * np.cross(n, r2)
    o2 = np.array([0.0, d, 0.0])
    g2 = Grasp(o2, n2, r2, 0.02, o2 - 0.005 * r2, o2 + 0.005 * r2)
    return g1, g2, d + 0.03 * alpha / np.pi + 0.03 * beta / np.pi


def test_3_distance_and_nms(report):
    cases = [(d, a, b) for d, a, b in [
        (0.0, 0.0, 0.0), (0.01, 0.0, 0.0), (0.0, np.pi / 2, 0.0), (0.0, 0.0, np.pi), (0.0, 0.0, np.pi / 2),
        (0.02, np.pi / 6, 0.0), (0.02, np.pi / 4, np.pi / 4), (0.05, np.pi / 3, np.pi / 3),
        (0.001, np.pi / 2, np.pi / 2), (0.1, 0.0, np.pi), (0.25, np.pi / 4, 0.0), (0.0, np.pi / 3, np.pi / 6),
        (0.003, np.pi / 6, 2 * np.pi / 3), (0.04, np.pi / 2, 3 * np.pi / 4), (0.5, 0.0, np.pi / 4),
        (0.0125, np.pi / 4, 5 * np.pi / 6), (0.07, np.pi / 3, np.pi / 2), (0.0, np.pi / 2, np.pi),
        (0.033, np.pi / 6, np.pi / 6), (1.0, np.pi / 2, np.pi / 3)]]
    errs = []
    for d, a, b in cases:
        g1, g2, expected = _frame_pair(d, a, b)
        errs.append(abs(grasp_distance(g1, g2) - expected))
        errs.append(abs(grasp_distance(g2, g1) - expected))
    worst = max(errs)
    rng = np.random.default_rng(13)
    mismatches = 0
    for thr in (0.01, 0.02, 0.05):
        grasps = [random_grasp(rng) for _ in range(200)]
        _, keep = nms(grasps, thr, return_indices=True)
        mismatches += keep != reference_nms(grasps, thr)
    ok = len(cases) == 20 and worst <= 1e-12 and mismatches == 0
    report(3, ok, f"20 constructed pairs, max |distance - hand value| = {worst:.2e}; "
                  f"NMS on 200 grasps x 3 thresholds: {mismatches} mismatches vs quadratic reference")
    assert ok


# --------------------------------------------------------------------------- 4

def test_4_encoding_round_trip(report):
    n_total = 10**6
    rng = np.random.default_rng(14)
    specs = EncodingSpecs()
    # angles strictly inside their ranges, away from the vertical-approach singularity
    t1 = rng.uniform(1e-6, 2 * np.pi - 1e-6, n_total)
    t2 = rng.uniform(1e-6, np.pi / 2 - 1e-3, n_total)
    t3 = rng.uniform(-np.pi / 2 + 1e-6, np.pi / 2 - 1e-6, n_total)
    offs = rng.uniform(-0.04 + 1e-9, 0.04 - 1e-9, (n_total, 3))
    width = rng.uniform(1e-6, 0.04 - 1e-9, n_total)
    points = rng.uniform(-0.2, 0.2, (n_total, 3))
    worst = {"o": 0.0, "w": 0.0, "angles": 0.0, "n": 0.0, "r": 0.0}
    res_out = 0
    skipped = 0
    for i in range(n_total):
        try:
            n, r = angles_to_directions(t1[i], t2[i], t3[i])
        except Exception:
            skipped += 1
            continue
        o = points[i] - offs[i]
        g = Grasp(o, n, r, width[i], o - 0.4 * width[i] * r, o + 0.4 * width[i] * r)
        enc = encode_grasp(points[i], g, specs)
        _, res = enc.as_arrays()
        res_out += int((np.abs(res) > 0.5).any())
        dec = decode_grasp(points[i], enc, specs)
        worst["o"] = max(worst["o"], float(np.abs(dec.center - o).max()))
        worst["w"] = max(worst["w"], abs(dec.width - width[i]))
        worst["angles"] = max(worst["angles"], float(np.abs(np.subtract(dec.angles, (t1[i], t2[i], t3[i]))).max()))
        worst["n"] = max(worst["n"], float(np.abs(dec.approach - n).max()))
        worst["r"] = max(worst["r"], float(min(np.abs(dec.closing - r).max(), np.abs(dec.closing + r).max())))
    ok = (skipped == 0 and res_out == 0 and max(worst["o"], worst["w"], worst["angles"]) <= 1e-9
          and max(worst["n"], worst["r"]) <= 1e-8)
    report(4, ok, f"{n_total - skipped} grasps, residuals outside [-0.5, 0.5]: {res_out}; max error "
                  + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


# --------------------------------------------------------------------------- 5

def _exhaustive_labels(cloud, grasps, contacts, radius):
    """Per-point scan over every contact; contacts are (point, grasp_ref, positive) in order."""
    pts = np.array([c[0] for c in contacts])
    D = np.sqrt(((cloud[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    mask = np.full(len(cloud), 2)
    quality = np.zeros(len(cloud))
    ref = np.full(len(cloud), -1)
    for i in range(len(cloud)):
        best = None
        for k in np.flatnonzero(D[i] <= radius):
            _, r, pos = contacts[k]
            q = grasps[r].quality if pos else 0.0
            key = (-q, 0 if pos else 1, r if r >= 0 else np.inf, k)
            if best is None or key < best[0]:
                best = (key, q, r, pos)
        if best is not None:
            _, quality[i], ref[i], pos = best
            mask[i] = 1 if pos else 0
    return mask, quality, ref


def test_5_label_broadcast(report):
    rng = np.random.default_rng(15)
    mismatched = 0
    bad_q = 0
    sizes = [10_000, 10_000, 5_000, 2_000, 1]
    for trial, n in enumerate(sizes):
        grasps = [random_grasp(rng, spread=0.04) for _ in range(120)]
        for j in range(0, 120, 7):  # repeated qualities exercise the tie rules
            grasps[j] = grasps[j].with_quality(grasps[3].quality)
        cloud = rng.uniform(-0.05, 0.05, (n, 3))
        pos_ids = rng.choice(120, 70, replace=False)
        neg_ids = np.setdiff1d(np.arange(120), pos_ids)
        contacts = [(c, int(i), True) for i in pos_ids for c in (grasps[i].c1, grasps[i].c2)]
        neg = [(c, int(i), False) for i in neg_ids for c in (grasps[i].c1, grasps[i].c2)]
        neg += [(p, -1, False) for p in rng.uniform(-0.05, 0.05, (60, 3))]
        p_pos = ContactSet(np.array([c[0] for c in contacts]), np.array([c[1] for c in contacts]),
                           np.ones(len(contacts), dtype=np.int64))
        p_neg = ContactSet(np.array([c[0] for c in neg]), np.array([c[1] for c in neg]),
                           np.array([0 if c[1] >= 0 else -1 for c in neg]))
        out = broadcast_labels(cloud, grasps, p_pos, p_neg, 0.008)
        mask, quality, ref = _exhaustive_labels(cloud, grasps, contacts + neg, 0.008)
        mismatched += int((out.mask != mask).sum() + (out.grasp_ref != ref).sum()
                          + (out.quality != quality.astype(np.float32)).sum())
        bad_q += int((out.quality[out.mask == 1] <= 0).sum())
    ok = mismatched == 0 and bad_q == 0
    report(5, ok, f"{len(sizes)} clouds up to 10^4 points: {mismatched} field mismatches vs exhaustive reference, "
                  f"{bad_q} positive points with Q <= 0")
    assert ok


# --------------------------------------------------------------------------- 6

def test_6_rendering_fidelity(report):
    lib = builtin_library(10, seed=16)
    origin = default_camera_pose().translation
    worst, occluded, total = 0.0, 0, 0
    for s in range(10):
        scene = compose_scene(lib, int(5 + s % 8), seed=1000 + s)
        geo = SceneGeometry(scene, lib)
        img = render_depth(geo, noise=NoiseModel.none())
        pts, pix = depth_to_cloud(img, return_pixels=True)
        owner = img.owner.ravel()[pix]
        worst = max(worst, float(surface_error(geo, pts, owner).max()))
        occluded += int(occluded_points(geo, origin, pts, project).sum())
        total += len(pts)
    ok = worst <= 1e-5 and occluded == 0
    report(6, ok, f"10 scenes, {total} points: max surface distance {worst:.2e} m, "
                  f"{occluded} points failing the unoccluded re-cast check")
    assert ok


# --------------------------------------------------------------------------- 7, 8

def _run_desk(out):
    t0 = time.perf_counter()
    r = subprocess.run([sys.executable, "-m", "graspsynth.cli", "pipeline", "--desk", "--seed", "3",
                        "--jobs", str(os.cpu_count() or 1), "--out", str(out)],
                       capture_output=True, text=True, timeout=3600)
    return r, time.perf_counter() - t0


def _same_tree(a: Path, b: Path):
    fa = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    fb = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    return fa == fb and all((a / f).read_bytes() == (b / f).read_bytes() for f in fa)


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    first, t_first = _run_desk(root / "a")
    second, t_second = _run_desk(root / "b")
    return root, (first, t_first), (second, t_second)


def test_7_desk_pipeline(desk, report):
    root, (first, t1), (second, t2) = desk
    ran = first.returncode == 0 and second.returncode == 0
    v = subprocess.run([sys.executable, "-m", "graspsynth.cli", "validate", "--out", str(root / "a")],
                       capture_output=True, text=True, timeout=3600) if ran else None
    n_viol = len(pl.validate_dataset(root / "a")) if ran else -1
    identical = ran and _same_tree(root / "a", root / "b")
    stats = io.read_json(root / "a" / "stats.json", "stats") if ran else {}
    h = stats.get("width_histogram", {})
    hist_ok = (len(h.get("counts", [])) == 8 and h.get("edges", [None, None])[1] == 0.005
               and h.get("overflow", 1) == 0 and stats.get("max_width", 1) <= 0.04)
    ok = ran and v.returncode == 0 and n_viol == 0 and identical and hist_ok and max(t1, t2) < 600
    report(7, ok, f"10 objects / 50 scenes on {os.cpu_count()} core(s): {t1:.0f} s and {t2:.0f} s, "
                  f"validate exit {v.returncode if v else 'n/a'} with {n_viol} violations, "
                  f"rerun byte-identical: {identical}, width histogram {h.get('counts')} "
                  f"(max width {stats.get('max_width', float('nan')):.4f} m)")
    assert ok, (first.stderr[-2000:], second.stderr[-2000:])


def test_8_scene_soundness(desk, report):
    root = desk[0] / "a"
    assert (root / "manifest.json").exists()
    cfg = pl.RunConfig.from_dict(io.read_manifest(root)["config"])
    lib = pl.load_library(root)
    gripper = cfg.gripper_model()
    worst = 0.0
    checked = collided = 0
    for sid in pl.scene_ids(cfg):
        scene = io.read_scene(root / "scenes" / f"{sid}.json")
        geo = SceneGeometry(scene, lib)
        worst = max(worst, convex_penetration(geo.instance_meshes, samples=2000, seed=len(sid)))
        ann = pl.scene_annotations(root, scene)
        summary = io.read_json(root / "labels" / f"{sid}.json", "label_summary")
        for i in summary["positive_refs"]:
            g = ann.grasps[i]
            frame = grasp_frame(g, gripper)
            rep = check_collision_scene(gripper_boxes(gripper, frame, g.width), geo, int(ann.grasp_instance[i]),
                                        closing_box(gripper, frame, g.width), cfg.labeling.collision_margin)
            checked += 1
            collided += rep.collided
    ok = worst <= 1e-3 and collided == 0 and checked > 0
    report(8, ok, f"max pairwise penetration {worst:.2e} m over {len(pl.scene_ids(cfg))} scenes; "
                  f"{checked} positive grasps re-checked, {collided} in collision")
    assert ok
