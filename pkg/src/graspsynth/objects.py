"""Object models (surface mesh + mass properties + friction) and the built-in
procedural object library."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geom import primitives
from .geom.bvh import Bvh
from .geom.mesh import MassProperties, TriangleMesh, mass_properties


@dataclass(eq=False)
class ObjectModel:
    object_id: str
    mesh: TriangleMesh
    friction: float = 0.3
    density: float = 1000.0
    source: dict = field(default_factory=dict)

    @cached_property
    def mass_properties(self) -> MassProperties:
        return mass_properties(self.mesh, self.density)

    @property
    def centroid(self) -> np.ndarray:
        return self.mass_properties.centroid

    @cached_property
    def bvh(self) -> Bvh:
        return Bvh(self.mesh)

    @cached_property
    def radius(self) -> float:
        """Bounding-sphere radius about the centroid."""
        return self.mesh.bounding_radius(self.centroid)


SHAPES = ("box", "cylinder", "sphere", "ellipsoid", "cone")


def make_shape(kind: str, rng: np.random.Generator) -> tuple[TriangleMesh, dict]:
    """Random tabletop-sized primitive; at least one cross-section fits a 4 cm gripper."""
    u = rng.uniform
    if kind == "box":
        dims = [round(u(0.015, 0.034), 4), round(u(0.03, 0.07), 4), round(u(0.03, 0.09), 4)]
        return primitives.box(dims), {"shape": kind, "extents": dims}
    if kind == "cylinder":
        r, h = round(u(0.008, 0.016), 4), round(u(0.04, 0.1), 4)
        return primitives.cylinder(r, h, sections=24), {"shape": kind, "radius": r, "height": h}
    if kind == "sphere":
        r = round(u(0.01, 0.017), 4)
        return primitives.icosphere(r, 2), {"shape": kind, "radius": r}
    if kind == "ellipsoid":
        radii = [round(u(0.009, 0.016), 4), round(u(0.015, 0.03), 4), round(u(0.02, 0.04), 4)]
        return primitives.ellipsoid(radii, 2), {"shape": kind, "radii": radii}
    if kind == "cone":
        r, h = round(u(0.012, 0.017), 4), round(u(0.04, 0.08), 4)
        top = round(r * u(0.4, 0.8), 4)
        return primitives.cylinder(r, h, sections=24, top_radius=top), {"shape": kind, "radius": r,
                                                                          "top_radius": top, "height": h}
    raise ValueError(f"unknown shape {kind!r}")


def builtin_library(count: int, seed: int, friction: float = 0.3) -> list[ObjectModel]:
    """``count`` procedural objects cycling through the primitive kinds."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        kind = SHAPES[i % len(SHAPES)]
        mesh, params = make_shape(kind, rng)
        out.append(ObjectModel(f"obj_{i:03d}_{kind}", mesh, friction, 1000.0, params))
    return out
