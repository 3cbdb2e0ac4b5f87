"""Bin-plus-residual regression targets for grasp pose, canonical gripper frame
and enlarged closing-region cropping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .collision import closing_box
from .geom.mesh import Pose
from .grasp import Grasp, GripperModel, grasp_frame

HALF_PI = np.pi / 2
_RANGE_TOL = 1e-9


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class AngleBinSpec:
    start: float
    unit: float
    count: int

    def __post_init__(self):
        if not self.unit > 0 or self.count < 1:
            raise ValueError("angle bins need a positive unit and count")

    @property
    def stop(self) -> float:
        return self.start + self.count * self.unit


@dataclass(frozen=True)
class LinearBinSpec:
    length: float
    search_range: float
    count: int

    def __post_init__(self):
        if not self.length > 0 or self.count < 1:
            raise ValueError("linear bins need a positive length and count")
        if abs(self.count * self.length - 2 * self.search_range) > 1e-12 * max(1.0, self.search_range):
            raise ValueError("bin count x bin length must equal twice the search range")


def _theta_spec(lo, hi, count):
    return AngleBinSpec(lo, (hi - lo) / count, count)


@dataclass(frozen=True)
class EncodingSpecs:
    """Bin layout for every target; defaults are 30 degree angle bins, 1 cm
    position bins over +/- 4 cm and 5 mm width bins over [0, 4 cm]."""

    theta1: AngleBinSpec = _theta_spec(0.0, 2 * np.pi, 12)
    theta2: AngleBinSpec = _theta_spec(0.0, HALF_PI, 3)
    theta3: AngleBinSpec = _theta_spec(-HALF_PI, HALF_PI, 6)
    position: LinearBinSpec = LinearBinSpec(0.01, 0.04, 8)
    width: LinearBinSpec = LinearBinSpec(0.005, 0.02, 8)

    @classmethod
    def for_gripper(cls, gripper: GripperModel, width_bins: int = 8, **kw) -> "EncodingSpecs":
        w = gripper.max_width
        return cls(width=LinearBinSpec(w / width_bins, w / 2, width_bins), **kw)


# --------------------------------------------------------------------------- scalar codecs

def encode_angle(theta: float, spec: AngleBinSpec) -> tuple[int, float]:
    """Bin index and residual in units of the bin width, measured from the bin center."""
    theta = float(theta)
    if theta < spec.start - _RANGE_TOL or theta > spec.stop + _RANGE_TOL:
        raise EncodingError(f"angle {theta} outside [{spec.start}, {spec.stop}]")
    b = int(np.floor((theta - spec.start) / spec.unit))
    b = min(max(b, 0), spec.count - 1)
    res = (theta - spec.start - (b * spec.unit + spec.unit / 2)) / spec.unit
    return b, float(min(0.5, max(-0.5, res)))  # clip rounding at the window edges


def decode_angle(b: int, res: float, spec: AngleBinSpec) -> float:
    return spec.start + b * spec.unit + spec.unit / 2 + res * spec.unit


def encode_linear(u_p: float, u_pc: float, spec: LinearBinSpec) -> tuple[int, float]:
    """Bin of the offset ``u_p - u_pc`` inside the symmetric window ``+/- S``."""
    off = float(u_p) - float(u_pc)
    S = spec.search_range
    if abs(off) > S + _RANGE_TOL:
        raise EncodingError(f"offset {off} outside +/-{S}")
    b = int(np.floor((off + S) / spec.length))
    b = min(max(b, 0), spec.count - 1)
    res = (off + S - (b * spec.length + spec.length / 2)) / spec.length
    return b, float(min(0.5, max(-0.5, res)))  # clip rounding at the window edges


def decode_linear(u_p: float, b: int, res: float, spec: LinearBinSpec) -> float:
    return float(u_p) + spec.search_range - (b + 0.5 + res) * spec.length


def encode_width(width: float, spec: LinearBinSpec) -> tuple[int, float]:
    """Absolute width binning over ``[0, 2 S]`` via the linear codec with the
    reference point at the window center."""
    return encode_linear(width, spec.search_range, spec)


def decode_width(b: int, res: float, spec: LinearBinSpec) -> float:
    # inverse of encode_linear(w, S): w = S + (b + 0.5 + res) d - S
    return (b + 0.5 + res) * spec.length


# --------------------------------------------------------------------------- angles

def _fold_theta3(r):
    """Azimuth of the x-y projection of r, folded into (-pi/2, pi/2]."""
    phi = np.arctan2(r[1], r[0])
    if phi > HALF_PI:
        phi -= np.pi
    elif phi <= -HALF_PI:
        phi += np.pi
    return phi


def grasp_to_angles(n, r) -> tuple[float, float, float]:
    """Approach azimuth and elevation, and the folded closing-axis azimuth.

    ``theta2`` is the magnitude of the approach elevation from the x-y plane;
    approaches point down into the bin, so decoding yields n_z = -sin(theta2).
    When the approach is vertical (theta2 = pi/2) theta1 is set to 0.
    """
    n = np.asarray(n, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if abs(n @ r) >= 1e-6:
        raise EncodingError("approach and closing directions are not orthogonal")
    if np.hypot(r[0], r[1]) < 1e-9:
        raise EncodingError("closing axis is vertical; theta3 undefined")
    theta2 = float(np.arcsin(min(1.0, abs(n[2]))))
    horiz = np.hypot(n[0], n[1])
    theta1 = 0.0 if horiz < 1e-12 else float(np.arctan2(n[1], n[0]) % (2 * np.pi))
    if theta1 >= 2 * np.pi:
        theta1 = 0.0
    return theta1, theta2, float(_fold_theta3(r))


def angles_to_directions(theta1: float, theta2: float, theta3: float):
    """Inverse of :func:`grasp_to_angles` for downward approaches.

    ``r`` is the unique direction (up to sign) orthogonal to ``n`` whose x-y
    projection has azimuth ``theta3``: ``h = (cos theta3, sin theta3, 0)``
    is moved along z onto the plane orthogonal to ``n``.
    """
    c2 = np.cos(theta2)
    n = np.array([c2 * np.cos(theta1), c2 * np.sin(theta1), -np.sin(theta2)])
    h = np.array([np.cos(theta3), np.sin(theta3), 0.0])
    hn = float(h @ n)
    if abs(n[2]) < 1e-12:
        if abs(hn) > 1e-12:
            raise EncodingError("closing azimuth parallel to a horizontal approach")
        r = h
    else:
        r = h - (hn / n[2]) * np.array([0.0, 0.0, 1.0])
    norm = np.linalg.norm(r)
    if norm < 1e-12:
        raise EncodingError("degenerate closing direction")
    r = r / norm
    r -= (r @ n) * n  # remove rounding drift
    return n, r / np.linalg.norm(r)


# --------------------------------------------------------------------------- full grasp

TARGETS = ("x", "y", "z", "width", "theta1", "theta2", "theta3")


@dataclass
class EncodedGrasp:
    bins: dict = field(default_factory=dict)
    res: dict = field(default_factory=dict)

    def as_arrays(self):
        return (np.array([self.bins[k] for k in TARGETS], dtype=np.int32),
                np.array([self.res[k] for k in TARGETS], dtype=np.float64))

    @classmethod
    def from_arrays(cls, bins, res) -> "EncodedGrasp":
        return cls({k: int(b) for k, b in zip(TARGETS, bins)}, {k: float(x) for k, x in zip(TARGETS, res)})


def encode_grasp(point, g: Grasp, specs: EncodingSpecs = EncodingSpecs()) -> EncodedGrasp:
    """Targets of grasp ``g`` relative to the cloud point ``point``.

    Only downward approaches (n_z <= 0) are encodable.
    """
    point = np.asarray(point, dtype=np.float64)
    if g.approach[2] > 1e-9:
        raise EncodingError("approach points upward, out of the bin")
    out = EncodedGrasp()
    for k, axis in zip("xyz", range(3)):
        out.bins[k], out.res[k] = encode_linear(point[axis], g.center[axis], specs.position)
    out.bins["width"], out.res["width"] = encode_width(g.width, specs.width)
    angles = grasp_to_angles(g.approach, g.closing)
    for k, theta, spec in zip(("theta1", "theta2", "theta3"), angles, (specs.theta1, specs.theta2, specs.theta3)):
        out.bins[k], out.res[k] = encode_angle(theta, spec)
    return out


@dataclass(frozen=True)
class DecodedGrasp:
    center: np.ndarray
    approach: np.ndarray
    closing: np.ndarray
    width: float
    angles: tuple


def decode_grasp(point, enc: EncodedGrasp, specs: EncodingSpecs = EncodingSpecs()) -> DecodedGrasp:
    point = np.asarray(point, dtype=np.float64)
    center = np.array([decode_linear(point[a], enc.bins[k], enc.res[k], specs.position)
                       for k, a in zip("xyz", range(3))])
    width = decode_width(enc.bins["width"], enc.res["width"], specs.width)
    angles = tuple(decode_angle(enc.bins[k], enc.res[k], s)
                   for k, s in (("theta1", specs.theta1), ("theta2", specs.theta2), ("theta3", specs.theta3)))
    n, r = angles_to_directions(*angles)
    return DecodedGrasp(center, n, r, width, angles)


def encode_cloud(points, grasps, grasp_ref, mask, specs: EncodingSpecs = EncodingSpecs()):
    """Targets for every positive point; other rows get bin -1 and residual 0.

    Returns ``(bins (N, 7) int32, res (N, 7) float64, ok (N,) bool)``;
    ``ok`` is False where the grasp cannot be encoded (e.g. out of range).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    bins = np.full((n, len(TARGETS)), -1, dtype=np.int32)
    res = np.zeros((n, len(TARGETS)))
    ok = np.zeros(n, dtype=bool)
    for i in np.flatnonzero((np.asarray(mask) == 1) & (np.asarray(grasp_ref) >= 0)):
        try:
            b, r = encode_grasp(points[i], grasps[int(grasp_ref[i])], specs).as_arrays()
        except EncodingError:
            continue
        bins[i], res[i], ok[i] = b, r, True
    return bins, res, ok


# --------------------------------------------------------------------------- canonical frame

def canonical_transform(g: Grasp, gripper: GripperModel = GripperModel()) -> Pose:
    """World-to-gripper transform (inverse of the gripper frame)."""
    return grasp_frame(g, gripper).inverse()


@dataclass
class CanonicalRegion:
    points: np.ndarray
    indices: np.ndarray
    transform: Pose


def crop_region(cloud, g: Grasp, gripper: GripperModel = GripperModel(), eps: float = 1.2) -> CanonicalRegion:
    """Points inside the closing volume scaled by ``eps``, in gripper coordinates."""
    if eps < 1:
        raise ValueError("eps must be >= 1")
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    T = canonical_transform(g, gripper)
    local = T.apply(cloud)
    box = closing_box(gripper, Pose.identity(), g.width, eps)
    inside = box.contains(local)
    idx = np.flatnonzero(inside)
    return CanonicalRegion(local[idx], idx, T)
