import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import brute_ray
from graspsynth.collision import check_collision_object, gripper_boxes
from graspsynth.dataset.io import grasp_to_dict
from graspsynth.geom import primitives
from graspsynth.geom.bvh import Bvh
from graspsynth.grasp import GripperModel, grasp_frame
from graspsynth.objects import ObjectModel, builtin_library
from graspsynth.sampler import (POSITIVE, STATUSES, WIDTH, SamplerConfig, find_antipodal_contact, generate_grasps,
                                is_antipodal, sample_cone_directions)


def test_cone_directions_degenerate():
    d = sample_cone_directions([0, 0, 1], 0.0, 5, seed=1)
    np.testing.assert_array_equal(d, np.tile([0, 0, 1.0], (5, 1)))


def test_cone_directions_bound_and_determinism():
    n = np.array([0.3, -0.2, 0.9])
    n /= np.linalg.norm(n)
    d = sample_cone_directions(n, 0.3, 1000, seed=5)
    ang = np.degrees(np.arccos(np.clip(d @ n, -1, 1)))
    bound = np.degrees(np.arctan(0.3))
    assert ang.max() <= bound + 1e-9
    assert bound - ang.max() < 0.5
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(d, sample_cone_directions(n, 0.3, 1000, seed=5))


def test_cone_directions_uniform_on_cap():
    # cos(angle) is uniform on [cos(a), 1] for a uniform cap distribution
    d = sample_cone_directions([0, 0, 1], 0.3, 20000, seed=2)
    lo = np.cos(np.arctan(0.3))
    hist, _ = np.histogram(d[:, 2], bins=10, range=(lo, 1))
    assert np.abs(hist - 2000).max() < 4 * np.sqrt(2000)


def test_antipodal_contact_sphere():
    bvh = Bvh(primitives.icosphere(1.0, 4))
    c2, n2 = find_antipodal_contact(bvh, [1, 0, 0], [-1, 0, 0])
    np.testing.assert_allclose(c2, [-1, 0, 0], atol=2e-3)
    assert n2[0] < -0.99


def test_antipodal_contact_grazing_plate():
    bvh = Bvh(primitives.box([0.1, 0.1, 0.002]))
    # travel along the face never leaves the body within the gripper opening
    assert find_antipodal_contact(bvh, [0, 0, 0.001], [1, 0, 0], max_travel=0.04) is None
    assert find_antipodal_contact(bvh, [0, 0, 0.0011], [1, 0, 0]) is None


def test_antipodal_contact_matches_brute_farthest():
    rng = np.random.default_rng(3)
    mesh = primitives.ellipsoid([0.02, 0.03, 0.025], 2)
    bvh = Bvh(mesh)
    corners = mesh.corners
    for _ in range(200):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        hit = find_antipodal_contact(bvh, -0.1 * d, d)  # start outside, crossing the body
        # farthest = nearest hit of the reversed ray from far beyond
        t_rev, _ = brute_ray(corners, 0.1 * d, -d)
        np.testing.assert_allclose(hit[0], 0.1 * d - t_rev * d, atol=1e-12)


def test_is_antipodal_examples():
    assert is_antipodal([1, 0, 0], [1, 0, 0], [-1, 0, 0], [-1, 0, 0], 0.1)
    assert not is_antipodal([0.5, 0, 0.2], [1, 0, 0], [0.2, 0, 0.5], [0, 0, 1], 0.3)
    assert is_antipodal([1, 0, 0], [1, 0, 0], [-1, 0, 0], [-1, 0, 0], 0.0)


def _sphere(diameter):
    return ObjectModel("sphere", primitives.icosphere(diameter / 2, 3))


@pytest.fixture(scope="module")
def sphere_set():
    cfg = SamplerConfig(n_points=300, directions=8, friction=0.3, seed=4, approach_trials=4)
    return generate_grasps(_sphere(0.03), GripperModel(), cfg), cfg


def test_sphere_points_mostly_graspable(sphere_set):
    gs, cfg = sphere_set
    frac = 1 - len(gs.negative_points) / cfg.n_points
    assert frac > 0.95


def test_sampler_invariants(sphere_set):
    gs, cfg = sphere_set
    gripper = GripperModel()
    obj = _sphere(0.03)
    statuses = sum(gs.counts[s] for s in STATUSES)
    assert statuses == cfg.n_points * cfg.directions
    for g in gs.positives:
        g.validate(gripper)
        assert g.quality > 0
        n1 = g.c1 / np.linalg.norm(g.c1)
        n2 = g.c2 / np.linalg.norm(g.c2)
        assert is_antipodal(g.c1, n1, g.c2, n2, 0.3 + 0.05)  # sphere normals approximated radially
        assert not check_collision_object(gripper_boxes(gripper, grasp_frame(g, gripper), g.width), obj.bvh)


def test_big_sphere_width_rejected():
    cfg = SamplerConfig(n_points=60, directions=4, seed=1, approach_trials=2)
    gs = generate_grasps(_sphere(0.06), GripperModel(), cfg)
    assert gs.positives == [] and gs.counts[POSITIVE] == 0
    assert gs.counts[WIDTH] == 60 * 4
    assert len(gs.negative_points) == 60


def test_generate_deterministic():
    obj = builtin_library(1, seed=2)[0]
    cfg = SamplerConfig(n_points=64, directions=4, seed=9, approach_trials=3)
    a = generate_grasps(obj, GripperModel(), cfg)
    b = generate_grasps(obj, GripperModel(), cfg)
    assert [grasp_to_dict(g) for g in a.positives] == [grasp_to_dict(g) for g in b.positives]
    np.testing.assert_array_equal(a.negative_points, b.negative_points)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_antipodal_symmetric(seed, gamma):
    rng = np.random.default_rng(seed)
    c1, n1, c2, n2 = rng.normal(size=(4, 3))
    n1 /= np.linalg.norm(n1)
    n2 /= np.linalg.norm(n2)
    assert is_antipodal(c1, n1, c2, n2, gamma) == is_antipodal(c2, n2, c1, n1, gamma)
