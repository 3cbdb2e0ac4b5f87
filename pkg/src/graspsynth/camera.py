"""Pinhole depth rendering, back-projection, bin cropping and downsampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom.mesh import Pose
from .scene import BinModel, SceneGeometry


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.001
    dropout: float = 0.005

    def __post_init__(self):
        if self.sigma < 0 or not 0 <= self.dropout < 1:
            raise ValueError("need sigma >= 0 and dropout in [0, 1)")

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(0.0, 0.0)


NEAR, FAR = 0.1, 3.0


def default_camera_pose(height: float = 1.3) -> Pose:
    """Camera above the bin center looking straight down (camera z = world -z)."""
    rot = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])
    return Pose(rot, np.array([0.0, 0.0, height]))


@dataclass
class DepthImage:
    """Camera z-depth per pixel (0 = invalid) and the scene instance seen at each
    pixel (-1 bin, -2 nothing), both ``(height, width)``."""

    depth: np.ndarray
    owner: np.ndarray
    near: float = NEAR
    far: float = FAR

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0


def pixel_rays(intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions with unit z component, row-major ``(H*W, 3)``."""
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    x = (u.ravel() - intr.cx) / intr.fx
    y = (v.ravel() - intr.cy) / intr.fy
    return np.column_stack([x, y, np.ones_like(x)])


def render_depth(geometry: SceneGeometry, intr: CameraIntrinsics = CameraIntrinsics(),
                 camera_pose: Pose | None = None, noise: NoiseModel = NoiseModel(), seed: int = 0,
                 near: float = NEAR, far: float = FAR) -> DepthImage:
    """Ray-cast every pixel against the instances and the bin, then apply noise."""
    camera_pose = camera_pose or default_camera_pose()
    rays = pixel_rays(intr)
    dirs = camera_pose.apply_vectors(rays)
    scale = np.linalg.norm(dirs, axis=1)
    unit = dirs / scale[:, None]
    origin = camera_pose.translation
    # t along unit rays; z-depth = t / |ray| because the camera-frame ray has z = 1
    t, tri = geometry.merged_bvh.intersect(origin[None], unit, 0.0, far * scale)
    depth = np.where(tri >= 0, t / scale, 0.0)
    owner = np.where(tri >= 0, geometry.owner[np.maximum(tri, 0)], -2)
    rng = np.random.default_rng(seed)
    if noise.sigma > 0:
        depth = np.where(depth > 0, depth + rng.normal(0.0, noise.sigma, depth.shape), 0.0)
    if noise.dropout > 0:
        depth = np.where(rng.random(depth.shape) < noise.dropout, 0.0, depth)
    bad = (depth <= near) | (depth >= far)
    depth[bad] = 0.0
    owner = np.where(bad, -2, owner)
    shape = (intr.height, intr.width)
    return DepthImage(depth.reshape(shape), owner.reshape(shape).astype(np.int64), near, far)


def depth_to_cloud(depth: DepthImage | np.ndarray, intr: CameraIntrinsics = CameraIntrinsics(),
                   camera_pose: Pose | None = None, return_pixels: bool = False):
    """Back-project valid pixels to world points (row-major pixel order)."""
    camera_pose = camera_pose or default_camera_pose()
    d = depth.depth if isinstance(depth, DepthImage) else np.asarray(depth, dtype=np.float64)
    flat = d.ravel()
    idx = np.flatnonzero(flat > 0)
    pts_cam = pixel_rays(intr)[idx] * flat[idx, None]
    pts = camera_pose.apply(pts_cam)
    return (pts, idx) if return_pixels else pts


def project(points, intr: CameraIntrinsics = CameraIntrinsics(), camera_pose: Pose | None = None):
    """World points to ``(u, v, depth)`` pixel coordinates."""
    camera_pose = camera_pose or default_camera_pose()
    cam = camera_pose.inverse().apply(points)
    z = cam[..., 2]
    u = intr.fx * cam[..., 0] / z + intr.cx
    v = intr.fy * cam[..., 1] / z + intr.cy
    return np.stack([u, v, z], axis=-1)


def bin_slabs(bin_model: BinModel):
    """Axis-aligned ``(lo, hi)`` boxes making up the bin (floor and four walls)."""
    L, W, H = bin_model.extents
    t = bin_model.wall
    return [
        (np.array([-L / 2 - t, -W / 2 - t, -t]), np.array([L / 2 + t, W / 2 + t, 0.0])),
        (np.array([-L / 2 - t, -W / 2 - t, 0.0]), np.array([-L / 2, W / 2 + t, H])),
        (np.array([L / 2, -W / 2 - t, 0.0]), np.array([L / 2 + t, W / 2 + t, H])),
        (np.array([-L / 2, -W / 2 - t, 0.0]), np.array([L / 2, -W / 2, H])),
        (np.array([-L / 2, W / 2, 0.0]), np.array([L / 2, W / 2 + t, H])),
    ]


def distance_to_bin(points, bin_model: BinModel) -> np.ndarray:
    """Exact Euclidean distance from each point to the bin solid."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.full(len(points), np.inf)
    for lo, hi in bin_slabs(bin_model):
        gap = np.maximum(np.maximum(lo - points, points - hi), 0.0)
        out = np.minimum(out, np.linalg.norm(gap, axis=1))
    return out


def crop_to_bin(cloud, bin_model: BinModel, margin: float = 0.0, remove_bin: bool = False,
                bin_distance: float = 0.002, return_indices: bool = False):
    """Keep points inside the bin interior grown by ``margin`` (closed box).

    With ``remove_bin`` set, points within ``bin_distance`` of the bin solid are
    dropped as well.
    """
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    lo, hi = bin_model.interior_bounds(margin)
    keep = np.all((cloud >= lo) & (cloud <= hi), axis=1)
    if remove_bin:
        keep &= distance_to_bin(cloud, bin_model) > bin_distance
    idx = np.flatnonzero(keep)
    return (cloud[idx], idx) if return_indices else cloud[idx]


@dataclass
class Downsampled:
    points: np.ndarray
    indices: np.ndarray
    resampled: bool


def downsample(cloud, target_count: int, seed: int) -> Downsampled:
    """Uniform subsample without replacement, or resample with replacement
    (``resampled=True``) when the cloud is smaller than the target."""
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if target_count < 0:
        raise ValueError("target_count must be nonnegative")
    rng = np.random.default_rng(seed)
    n = len(cloud)
    if target_count == 0 or n == 0:
        return Downsampled(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), target_count > 0)
    if n >= target_count:
        idx = np.sort(rng.choice(n, target_count, replace=False))
        resampled = False
    else:
        idx = np.sort(np.concatenate([np.arange(n), rng.choice(n, target_count - n, replace=True)]))
        resampled = True
    return Downsampled(cloud[idx], idx.astype(np.int64), resampled)
