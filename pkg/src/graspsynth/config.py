"""Run configuration: parameter groups, validation, JSON loading and seed derivation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from .grasp import GripperModel


class ConfigError(ValueError):
    pass


@dataclass
class SamplerSection:
    n_points: int = 16384
    directions: int = 8
    friction: float = 0.3
    approach_trials: int = 8
    nms_threshold: float = 0.02
    clearance: float = 0.002


@dataclass
class QualitySection:
    cone_edges: int = 8
    torsion_radius: float = 0.005
    backend: str = "hull"


@dataclass
class SceneSection:
    bin_extents: list = field(default_factory=lambda: [0.4, 0.3, 0.15])
    bin_wall: float = 0.01
    min_objects: int = 5
    max_objects: int = 12
    settle_rounds: int = 5


@dataclass
class CameraSection:
    width: int = 640
    height: int = 480
    fx: float = 600.0
    fy: float = 600.0
    camera_height: float = 1.3
    noise_sigma: float = 0.001
    dropout: float = 0.005
    crop_margin: float = 0.0
    remove_bin: bool = False
    points: int = 16384


@dataclass
class LabelSection:
    radius: float = 0.005
    collision_margin: float = 0.001


@dataclass
class EncodingSection:
    theta1_bins: int = 12
    theta2_bins: int = 3
    theta3_bins: int = 6
    position_bin: float = 0.01
    position_range: float = 0.04
    width_bins: int = 8
    crop_eps: float = 1.2


@dataclass
class RunConfig:
    seed: int = 0
    objects: int = 10  # built-in object count; ignored when ``library`` is set
    scenes: int = 50
    train_fraction: float = 0.8
    library: str | None = None  # path to a library manifest; builtin shapes when None
    jobs: int = 1
    viz_top_k: int = 15
    gripper: dict = field(default_factory=lambda: GripperModel().to_dict())
    sampler: SamplerSection = field(default_factory=SamplerSection)
    quality: QualitySection = field(default_factory=QualitySection)
    scene: SceneSection = field(default_factory=SceneSection)
    camera: CameraSection = field(default_factory=CameraSection)
    labeling: LabelSection = field(default_factory=LabelSection)
    encoding: EncodingSection = field(default_factory=EncodingSection)

    # ------------------------------------------------------------------ conversion

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, "config")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        data.pop("format_version", None)
        data.pop("kind", None)
        return cls.from_dict(data)

    def gripper_model(self) -> GripperModel:
        try:
            return GripperModel(**self.gripper)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"gripper: {exc}") from None

    # ------------------------------------------------------------------ validation

    def validate(self) -> "RunConfig":
        """Check every field against the preconditions of the stage that consumes it."""
        errs = []

        def need(cond, msg):
            if not cond:
                errs.append(msg)

        need(isinstance(self.seed, int) and self.seed >= 0, "seed must be a nonnegative integer")
        need(self.objects >= 1, "objects must be >= 1")
        need(self.scenes >= 0, "scenes must be >= 0")
        need(0 < self.train_fraction <= 1, "train_fraction must be in (0, 1]")
        need(self.jobs >= 1, "jobs must be >= 1")
        need(self.viz_top_k >= 0, "viz_top_k must be >= 0")
        try:
            gr = self.gripper_model()
        except ConfigError as exc:
            errs.append(str(exc))
            gr = None
        s = self.sampler
        need(s.n_points > 0 and s.directions > 0, "sampler.n_points and sampler.directions must be positive")
        need(s.friction >= 0, "sampler.friction must be nonnegative")
        need(s.approach_trials >= 1, "sampler.approach_trials must be >= 1")
        need(s.nms_threshold > 0, "sampler.nms_threshold must be positive")
        need(s.clearance >= 0, "sampler.clearance must be nonnegative")
        need(self.quality.cone_edges >= 3, "quality.cone_edges must be >= 3")
        need(self.quality.torsion_radius >= 0, "quality.torsion_radius must be nonnegative")
        need(self.quality.backend in ("hull", "directions"), "quality.backend must be 'hull' or 'directions'")
        sc = self.scene
        need(len(sc.bin_extents) == 3 and min(sc.bin_extents) > 0, "scene.bin_extents must be three positive numbers")
        need(sc.bin_wall > 0, "scene.bin_wall must be positive")
        need(1 <= sc.min_objects <= sc.max_objects, "need 1 <= scene.min_objects <= scene.max_objects")
        need(sc.settle_rounds >= 0, "scene.settle_rounds must be >= 0")
        c = self.camera
        need(c.width > 0 and c.height > 0 and c.fx > 0 and c.fy > 0, "camera intrinsics must be positive")
        need(c.camera_height > 0, "camera.camera_height must be positive")
        need(c.noise_sigma >= 0 and 0 <= c.dropout < 1, "camera noise: sigma >= 0 and dropout in [0, 1)")
        need(c.crop_margin >= 0, "camera.crop_margin must be nonnegative")
        need(c.points >= 0, "camera.points must be nonnegative")
        need(self.labeling.radius > 0, "labeling.radius must be positive")
        need(self.labeling.collision_margin >= 0, "labeling.collision_margin must be nonnegative")
        e = self.encoding
        need(min(e.theta1_bins, e.theta2_bins, e.theta3_bins, e.width_bins) >= 1, "encoding bin counts must be >= 1")
        need(e.position_bin > 0 and e.position_range > 0, "encoding position bins must be positive")
        if e.position_bin > 0:
            ratio = 2 * e.position_range / e.position_bin
            need(abs(ratio - round(ratio)) < 1e-9, "encoding.position_range must be a multiple of position_bin / 2")
        need(e.crop_eps >= 1, "encoding.crop_eps must be >= 1")
        if self.library is not None:
            need(Path(self.library).exists(), f"library manifest {self.library} not found")
        if errs:
            raise ConfigError("; ".join(errs))
        del gr
        return self

    def snapshot(self) -> dict:
        """Config as stored in a dataset manifest (``jobs`` does not affect output)."""
        d = self.to_dict()
        d.pop("jobs")
        return d


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    kw = {}
    for name, value in data.items():
        default = getattr(cls(), name) if name in known else None
        if is_dataclass(default):
            kw[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def desk_config(**overrides) -> RunConfig:
    """Small settings for a 10-object / 50-scene run on a single core."""
    cfg = RunConfig(objects=10, scenes=50)
    cfg.sampler = replace(cfg.sampler, n_points=192, directions=4, approach_trials=6)
    cfg.camera = replace(cfg.camera, points=8192)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def derive_seed(master: int, *keys) -> int:
    """Sub-seed from the master seed and stable string/int keys."""
    key = []
    for k in keys:
        h = 0xCBF29CE484222325
        for b in str(k).encode():
            h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
        key += [h & 0xFFFFFFFF, h >> 32]
    return int(np.random.SeedSequence(int(master), spawn_key=tuple(key)).generate_state(1, np.uint64)[0] >> 1)
