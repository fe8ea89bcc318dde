import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from inrmar.geometry import (GeometryError, GridSpec, Ray, ScanGeometry, clip_to_grid, default_fan,
                             default_parallel, ray_arrays, ray_for_bin, sample_points)


def test_parallel_view_zero_center_ray_points_down():
    g = ScanGeometry("parallel", 4, 5, 1.0)
    ray = ray_for_bin(g, 0, 2)
    np.testing.assert_allclose(ray.direction, [0.0, -1.0], atol=1e-15)
    # the line passes through the grid centre
    assert abs(ray.origin[0]) < 1e-12


def test_parallel_rays_in_a_view_are_parallel():
    g = default_parallel(GridSpec(32, 32, 1.0), 7, 40)
    for v in range(g.n_views):
        d = np.array([ray_for_bin(g, v, b).direction for b in range(g.n_bins)])
        cross = d[:, 0] * d[0, 1] - d[:, 1] * d[0, 0]
        assert np.abs(cross).max() < 1e-12


def test_fan_central_ray_passes_through_axis():
    g = ScanGeometry("fan", 8, 9, 1.0, (0, 2 * math.pi), 500.0)
    for v in range(g.n_views):
        ray = ray_for_bin(g, v, 4)
        o, d = ray.origin, ray.direction
        dist = abs(o[0] * d[1] - o[1] * d[0])
        assert dist < 1e-9


def test_bin_index_out_of_range():
    g = ScanGeometry("parallel", 4, 5, 1.0)
    with pytest.raises(IndexError):
        ray_for_bin(g, 4, 0)
    with pytest.raises(IndexError):
        ray_for_bin(g, 0, -1)


def test_geometry_validation():
    with pytest.raises(GeometryError):
        ScanGeometry("cone", 1, 1, 1.0)
    with pytest.raises(GeometryError):
        ScanGeometry("parallel", 0, 1, 1.0)
    with pytest.raises(GeometryError):
        ScanGeometry("parallel", 1, 1, 0.0)
    with pytest.raises(GeometryError):
        ScanGeometry("fan", 1, 1, 1.0)
    with pytest.raises(GeometryError):
        ScanGeometry("parallel", 1, 1, 1.0, out_of_plane_slope=0.1)
    fan = ScanGeometry("fan", 1, 1, 1.0, source_axis_distance=10.0)
    with pytest.raises(GeometryError):
        fan.check_grid(GridSpec(100, 100, 1.0))


def test_clip_horizontal_ray_through_center():
    grid = GridSpec(100, 50, 1.0)
    ray = clip_to_grid(Ray(np.array([-200.0, 0.0]), np.array([1.0, 0.0]), (0, 400)), grid)
    assert ray.length == pytest.approx(100.0, abs=1e-12)


def test_clip_ray_missing_the_box():
    grid = GridSpec(10, 10, 1.0)
    ray = clip_to_grid(Ray(np.array([-50.0, 20.0]), np.array([1.0, 0.0]), (0, 100)), grid)
    assert ray.length == 0.0


def test_clip_diagonal_ray():
    grid = GridSpec(40, 40, 0.5)
    d = np.array([1.0, 1.0]) / math.sqrt(2)
    ray = clip_to_grid(Ray(np.array([-30.0, -30.0]), d, (0, 100)), grid)
    assert ray.length == pytest.approx(20.0 * math.sqrt(2), abs=1e-9)


def test_midpoint_samples():
    ray = Ray(np.zeros(2), np.array([1.0, 0.0]), (0.0, 10.0))
    pts, dt = sample_points(ray, 5)
    np.testing.assert_allclose(pts[:, 0], [1, 3, 5, 7, 9])
    assert dt == 2.0


def test_jittered_samples_are_seeded():
    ray = Ray(np.zeros(2), np.array([0.0, 1.0]), (2.0, 12.0))
    a, _ = sample_points(ray, 16, jitter=True, rng_seed=5)
    b, _ = sample_points(ray, 16, jitter=True, rng_seed=5)
    np.testing.assert_array_equal(a, b)
    # one sample per sub-interval
    cells = np.floor((a[:, 1] - 2.0) / (10.0 / 16)).astype(int)
    np.testing.assert_array_equal(cells, np.arange(16))


def test_sampling_errors():
    ray = Ray(np.zeros(2), np.array([1.0, 0.0]), (0.0, 0.0))
    with pytest.raises(ValueError):
        sample_points(ray, 4)
    with pytest.raises(ValueError):
        sample_points(Ray(np.zeros(2), np.array([1.0, 0.0]), (0.0, 1.0)), 0)


def test_default_parallel_covers_diagonal():
    grid = GridSpec(128, 128, 0.6)
    g = default_parallel(grid)
    assert g.n_views == 360 and g.n_bins == 600
    assert g.u[-1] - g.u[0] + g.bin_spacing >= 2 * grid.circumradius


def test_geometry_dict_roundtrip():
    g = default_fan(GridSpec(16, 16, 1.0), 10, 20, 300.0)
    assert ScanGeometry.from_dict(g.to_dict()) == g


@given(st.integers(0, 359), st.integers(0, 599))
def test_ray_directions_have_unit_norm(view, b):
    for g in (default_parallel(GridSpec(64, 64, 0.5)), default_fan(GridSpec(64, 64, 0.5))):
        d = ray_for_bin(g, view, b).direction
        assert abs(np.linalg.norm(d) - 1.0) < 1e-12


@given(st.floats(0.1, 100.0), st.integers(1, 200), st.floats(-5, 5), st.floats(-5, 5))
def test_midpoint_rule_exact_for_affine(L, n, a, b):
    ray = Ray(np.zeros(2), np.array([1.0, 0.0]), (0.0, L))
    pts, dt = sample_points(ray, n)
    approx = np.sum(a * pts[:, 0] + b) * dt
    exact = 0.5 * a * L * L + b * L
    assert abs(approx - exact) <= 1e-12 * max(1.0, abs(exact)) + 1e-12 * L * (abs(a) * L + abs(b))
    assert n * dt == pytest.approx(L, rel=1e-15)


@given(st.integers(0, 89), st.integers(0, 63))
def test_opposite_views_share_lines(view, b):
    g = ScanGeometry("parallel", 180, 64, 1.0, (0.0, 2 * math.pi))
    r1 = ray_for_bin(g, view, b)
    r2 = ray_for_bin(g, view + 90, g.n_bins - 1 - b)
    np.testing.assert_allclose(r1.direction, -r2.direction, atol=1e-12)
    diff = r2.origin - r1.origin
    assert abs(diff[0] * r1.direction[1] - diff[1] * r1.direction[0]) < 1e-9


def test_ray_arrays_match_ray_for_bin():
    for g in (default_parallel(GridSpec(16, 16, 1.0), 6, 10), default_fan(GridSpec(16, 16, 1.0), 6, 10, 100.0)):
        o, d, _ = ray_arrays(g)
        for v, b in [(0, 0), (3, 7), (5, 9)]:
            r = ray_for_bin(g, v, b)
            np.testing.assert_allclose(o[v, b], r.origin, atol=1e-9)
            np.testing.assert_allclose(d[v, b], r.direction, atol=1e-12)
