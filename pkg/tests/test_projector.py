import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from inrmar.geometry import GridSpec, ScanGeometry, default_parallel
from inrmar.mbhc import lnsinhc
from inrmar.phantoms import Disk, Image, PhantomSpec, Primitive, dental_layout, rasterize, two_disk_phantom
from inrmar.physics import (bundled_material, bundled_spectrum, constant_material, linear_material,
                            make_bichromatic, make_uniform, make_uniform_gauss)
from inrmar.projector import (RayMask, Sinogram, apply_noise, backproject_adjoint, path_lengths, poly_from_lengths,
                              project_analytic_mono, project_image, project_poly, rays_through_mask,
                              read_sinogram, write_sinogram, write_sinogram_csv)


def _disk(r=10.0, c=0.02, center=(0.0, 0.0)):
    return PhantomSpec((Primitive(Disk(center, r), constant_material("c", c)),))


def test_analytic_chords():
    geo = ScanGeometry("parallel", 3, 41, 0.5)
    sino = project_analytic_mono(_disk(8.0, 0.5), geo, 60.0).values
    u = geo.u
    expected = np.where(np.abs(u) < 8.0, 2 * 0.5 * np.sqrt(np.clip(64 - u ** 2, 0, None)), 0.0)
    for v in range(3):
        # sqrt amplifies rounding only at the tangent bins (u = +-r)
        np.testing.assert_allclose(sino[v], expected, atol=1e-6)
        np.testing.assert_allclose(np.delete(sino[v], [4, 36]), np.delete(expected, [4, 36]), atol=1e-12)
    assert sino[0, 20] == pytest.approx(8.0, abs=1e-12)


def test_empty_phantom_projects_to_zero():
    geo = ScanGeometry("parallel", 4, 8, 1.0)
    assert not project_analytic_mono(PhantomSpec(()), geo, 60).values.any()
    assert not project_poly(PhantomSpec(()), geo, bundled_spectrum()).values.any()


def test_raster_vs_analytic():
    grid = GridSpec(128, 128, 1.0)
    geo = default_parallel(grid, 36, 180)
    ph = _disk(40.0, 0.02)
    img = rasterize(ph, grid, 60.0)
    a = project_analytic_mono(ph, geo, 60.0).values
    r = project_image(img, geo).values
    # away from the tangent rays
    inner = np.abs(geo.u) < 40.0 - 2 * grid.pixel_mm
    assert np.abs(a - r)[:, inner].max() < 2 * 0.02 * grid.pixel_mm


def test_project_image_linear_and_zero(small_grid, small_parallel, rng):
    X = Image(small_grid, rng.random(small_grid.shape), "mu")
    Y = Image(small_grid, rng.random(small_grid.shape), "mu")
    assert not project_image(Image(small_grid, np.zeros(small_grid.shape), "mu"), small_parallel).values.any()
    lhs = project_image(Image(small_grid, 2.0 * X.values - 3.0 * Y.values, "mu"), small_parallel).values
    rhs = 2.0 * project_image(X, small_parallel).values - 3.0 * project_image(Y, small_parallel).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * np.abs(rhs).max())


@given(st.integers(0, 2 ** 31 - 1))
def test_adjoint_identity(seed):
    rng = np.random.default_rng(seed)
    grid = GridSpec(24, 20, 0.7)
    geo = default_parallel(grid, 17, 40)
    x = rng.standard_normal(grid.shape)
    y = rng.standard_normal(geo.shape())
    lhs = np.vdot(project_image(Image(grid, x, "mu"), geo).values, y)
    rhs = np.vdot(x, backproject_adjoint(Sinogram(geo, y), grid).values)
    assert abs(lhs - rhs) <= 1e-6 * max(abs(lhs), 1e-12) + 1e-9


def test_toy_bichromatic_values():
    spec = make_bichromatic(64, 80, 0.5)
    mu = np.array([[64.0, 5.0]])
    P = poly_from_lengths(np.array([[1.0], [2.0]]), mu, spec)
    assert P[0] == pytest.approx(5.6931, abs=1e-4)
    assert P[1] == pytest.approx(10.6931, abs=1e-4)


def test_mono_spectrum_matches_analytic():
    geo = ScanGeometry("parallel", 8, 32, 1.0)
    ph = two_disk_phantom(3.0, 12.0, bundled_material("titanium"))
    mono = project_analytic_mono(ph, geo, 60.0).values
    from inrmar.physics import Spectrum
    poly = project_poly(ph, geo, Spectrum([60.0], [1.0])).values
    np.testing.assert_allclose(poly, mono, atol=1e-12)


def test_sinh_identity_oracle():
    E0, dE = 70.0, 10.0
    mat = linear_material("lin", 0.3, -0.01, E0, dE)
    ph = PhantomSpec((Primitive(Disk((0.0, 0.0), 10.0), mat),))
    geo = ScanGeometry("parallel", 4, 40, 0.5)
    L = path_lengths(ph, geo)[..., 0]
    hit = L > 0
    closed = 0.3 * L - lnsinhc(dE * 0.01 * L)
    cells = project_poly(ph, geo, make_uniform(E0, dE, 2001, "cells")).values
    gauss = project_poly(ph, geo, make_uniform_gauss(E0, dE)).values
    assert (np.abs(cells - closed)[hit] / closed[hit]).max() < 1e-6
    assert (np.abs(gauss - closed)[hit] / closed[hit]).max() < 1e-9


def test_jensen_bounds():
    geo = ScanGeometry("parallel", 6, 48, 1.0)
    ph = dental_layout(6, (2,), GridSpec(64, 64, 0.8)).phantom
    spec = bundled_spectrum()
    poly = project_poly(ph, geo, spec).values
    lo = project_analytic_mono(ph, geo, spec.energies.max()).values
    hi = project_analytic_mono(ph, geo, spec.energies.min()).values
    assert (poly <= hi + 1e-9).all() and (poly >= lo - 1e-9).all()


def test_noise_high_dose_and_determinism():
    geo = ScanGeometry("parallel", 10, 30, 1.0)
    clean = project_poly(_disk(10.0, 0.05), geo, bundled_spectrum())
    hd = apply_noise(clean, 1e9, 0.0, seed=3)
    assert np.abs(hd.values - clean.values).max() < 0.01
    a = apply_noise(clean, 1e5, 10.0, seed=7)
    b = apply_noise(clean, 1e5, 10.0, seed=7)
    assert a.values.tobytes() == b.values.tobytes()
    with pytest.raises(ValueError):
        apply_noise(clean, 0.0)


def test_noise_mean_unbiased_within_standard_error():
    geo = ScanGeometry("parallel", 1, 1, 1.0)
    clean = Sinogram(geo, np.full((1, 1), 1.0))
    reps = np.tile(clean.values, (10_000, 1))
    noisy = apply_noise(Sinogram(ScanGeometry("parallel", 10_000, 1, 1.0), reps), 1e5, 10.0, seed=1).values
    se = noisy.std() / math.sqrt(noisy.size)
    assert abs(noisy.mean() - 1.0) < 3 * se


def test_rays_through_mask_cases():
    geo = ScanGeometry("parallel", 36, 64, 1.0)
    assert rays_through_mask(PhantomSpec(()), geo).included.all()
    ph = two_disk_phantom(4.0, 30.0, bundled_material("titanium"))
    assert rays_through_mask(ph, geo, math.inf).included.all()
    m = rays_through_mask(ph, geo, 0.0)
    assert not m.included.all() and m.included.any()


def test_excluded_bands_overlap_in_both_disk_views():
    grid = GridSpec(128, 128, 1.0)
    geo = default_parallel(grid, 180, 200)
    sep = 100.0
    r = sep / 2 * math.sin(math.pi / 18)
    ph = two_disk_phantom(r, sep, bundled_material("titanium"))
    c1, c2 = (path_lengths(PhantomSpec((p,)), geo)[..., 0] for p in ph.primitives)
    both = (c1 > 0) & (c2 > 0)
    deg = np.degrees(geo.angles)
    views_both = deg[both.any(axis=1)]
    assert views_both.min() >= 80 - 1 and views_both.max() <= 100 + 1
    assert ((deg > 85) & (deg < 95) & both.any(axis=1)).any()


def test_raymask_validation():
    geo = ScanGeometry("parallel", 2, 3, 1.0)
    with pytest.raises(ValueError):
        RayMask(geo, np.zeros((2, 3), bool))
    with pytest.raises(ValueError):
        RayMask(geo, np.ones((3, 2), bool))


def test_sinogram_file_roundtrip(tmp_path):
    geo = default_parallel(GridSpec(16, 16, 1.0), 5, 12)
    s = Sinogram(geo, np.random.default_rng(0).random(geo.shape()))
    write_sinogram(s, tmp_path / "s.bin")
    raw = (tmp_path / "s.bin").read_bytes()
    assert raw[:8] == b"INRSINO1" and len(raw) == 32 + 8 * s.values.size
    back = read_sinogram(tmp_path / "s.bin")
    assert back.geometry == geo
    np.testing.assert_array_equal(back.values, s.values)
    write_sinogram_csv(s, tmp_path / "s.csv")
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "s.csv", delimiter=","), s.values)
    (tmp_path / "bad.bin").write_bytes(b"nope" * 10)
    with pytest.raises(ValueError):
        read_sinogram(tmp_path / "bad.bin", geo)


def test_moment0_constant_for_mono(small_grid):
    from inrmar.consistency import moment0_spread
    geo = default_parallel(small_grid, 60, 100)
    sino = project_analytic_mono(_disk(12.0, 0.3, (5.0, -3.0)), geo, 60.0)
    assert moment0_spread(sino) < 0.01
