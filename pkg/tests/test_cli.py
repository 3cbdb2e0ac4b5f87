import filecmp
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from graspsynth import pipeline as pl
from graspsynth.cli import EXIT_CONFIG, EXIT_INVALID, EXIT_OK, main
from graspsynth.config import ConfigError, RunConfig, derive_seed, desk_config
from graspsynth.dataset import io

SMALL = ["--desk", "--objects", "3", "--scenes", "5", "--seed", "7"]


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(same_tree(a / d, b / d) for d in cmp.common_dirs)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "a"
    assert main(["pipeline", *SMALL, "--out", str(out)]) == EXIT_OK
    return out


def test_small_pipeline_validates(small_dataset):
    assert len(pl.validate_dataset(small_dataset)) == 0
    assert main(["validate", "--out", str(small_dataset)]) == EXIT_OK
    m = io.read_manifest(small_dataset)
    assert len(m["scenes"]) == 5 and m["seeds"]["master"] == 7
    lib = io.read_json(small_dataset / "objects" / "library.json", "library")
    assert len(lib["objects"]) == 3


def test_rerun_byte_identical(small_dataset, tmp_path):
    # second run in a fresh interpreter with two worker processes
    out = tmp_path / "b"
    r = subprocess.run([sys.executable, "-m", "graspsynth.cli", "pipeline", *SMALL, "--jobs", "2",
                        "--out", str(out)], capture_output=True, text=True, timeout=900)
    assert r.returncode == 0, r.stderr
    assert same_tree(small_dataset, out)


def test_stages_idempotent(small_dataset, tmp_path):
    out = tmp_path / "c"
    shutil.copytree(small_dataset, out)
    for stage in ("label", "encode", "stats", "export-viz"):
        assert main([stage, "--out", str(out)]) == EXIT_OK
    assert same_tree(small_dataset, out)


def test_validate_names_corrupted_ply(small_dataset, tmp_path, capsys):
    out = tmp_path / "d"
    shutil.copytree(small_dataset, out)
    target = sorted((out / "clouds").glob("*.ply"))[0]
    raw = bytearray(target.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    target.write_bytes(bytes(raw))
    capsys.readouterr()
    assert main(["validate", "--out", str(out)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert target.name in err


def test_validate_detects_semantic_edit(small_dataset, tmp_path):
    # a consistent checksum but a label that breaks an invariant
    out = tmp_path / "e"
    shutil.copytree(small_dataset, out)
    clouds = {p: io.read_labeled_cloud(p) for p in sorted((out / "labels").glob("*.ply"))}
    path = max(clouds, key=lambda p: int((clouds[p].mask == 1).sum()))
    cloud = clouds[path]
    pos = np.flatnonzero(cloud.mask == 1)
    assert len(pos)
    cloud.quality[pos[0]] = 0.0
    io.write_labeled_cloud(path, cloud)
    m = io.read_manifest(out)
    io.write_manifest(out, {k: v for k, v in m.items() if k not in ("checksums", "format_version")})
    v = pl.validate_dataset(out)
    assert len(v) and any(path.name in where for where, _ in v)


def test_stats_histogram(small_dataset, capsys):
    assert main(["stats", "--out", str(small_dataset)]) == EXIT_OK
    s = io.read_json(small_dataset / "stats.json", "stats")
    h = s["width_histogram"]
    assert len(h["counts"]) == 8 and h["edges"][1] == 0.005 and h["overflow"] == 0
    assert s["max_width"] <= 0.04
    assert "grasp width histogram" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sampler": {"nope": 1}}))
    assert main(["pipeline", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "nope" in capsys.readouterr().err
    assert main(["pipeline", "--desk", "--friction", "-1", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["pipeline", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["validate", "--out", str(tmp_path / "nothing")]) == EXIT_CONFIG
    # a stage whose inputs do not exist fails before computing anything
    assert main(["render", "--desk", "--out", str(tmp_path / "empty")]) == EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_corrupted_library_mesh(tmp_path, capsys):
    mesh = tmp_path / "lib" / "broken.ply"
    mesh.parent.mkdir()
    mesh.write_bytes(b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nend_header\n\x00")
    io.write_json(tmp_path / "lib" / "library.json",
                  {"kind": "library", "objects": [{"id": "broken", "mesh": "broken.ply"}]})
    code = main(["pipeline", "--desk", "--objects", str(tmp_path / "lib" / "library.json"),
                 "--out", str(tmp_path / "o")])
    assert code != EXIT_OK
    assert "broken" in capsys.readouterr().err


def _fails_on_b(cfg_dict, out, item):
    if item == "b":
        raise RuntimeError("boom")
    return item.upper()


def test_per_item_failures_reported(tmp_path):
    cfg = desk_config()
    with pytest.raises(pl.ItemFailures) as info:
        pl._map(_fails_on_b, ["a", "b", "c"], cfg, tmp_path)
    assert info.value.failures == [("b", "RuntimeError: boom")]
    assert pl._map(_fails_on_b, ["a", "c"], cfg, tmp_path) == ["A", "C"]


def test_config_round_trip_and_validation(tmp_path):
    cfg = desk_config(seed=3)
    path = tmp_path / "cfg.json"
    io.write_json(path, {"kind": "config", **cfg.snapshot()})
    back = RunConfig.load(path)
    assert back.to_dict() == {**cfg.to_dict(), "jobs": 1}
    with pytest.raises(ConfigError, match="position_range"):
        RunConfig.from_dict({"encoding": {"position_range": 0.043}}).validate()
    with pytest.raises(ConfigError, match="backend"):
        RunConfig.from_dict({"quality": {"backend": "magic"}}).validate()


def test_derive_seed_stable():
    assert derive_seed(7, "scene", 3) == derive_seed(7, "scene", 3)
    seeds = {derive_seed(7, "scene", i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(7, "grasps", "a") != derive_seed(8, "grasps", "a")
