import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from inrmar.geometry import GridSpec
from inrmar.phantoms import (Annulus, Disk, PhantomGeometryError, PhantomSpec, Primitive, dental_layout,
                             dental_phantom, material_mask, rasterize, rasterize_pair, two_disk_phantom)
from inrmar.physics import attenuation_at, bundled_material, constant_material, toy_metal


def test_two_disk_placement():
    ph = two_disk_phantom(5.0, 40.0, toy_metal())
    centers = sorted(p.shape.center for p in ph.primitives)
    assert centers == [(-20.0, 0.0), (20.0, 0.0)]
    with pytest.raises(PhantomGeometryError):
        two_disk_phantom(10.0, 15.0, toy_metal())


def test_two_disk_area_and_disjoint_union():
    grid = GridSpec(256, 256, 0.4)
    ph = two_disk_phantom(5.0, 40.0, constant_material("c", 1.0))
    img = rasterize(ph, grid, 60.0)
    per_disk = img.values.sum() * grid.pixel_mm ** 2 / 2
    assert per_disk == pytest.approx(math.pi * 25.0, rel=0.02)
    masks = [rasterize(PhantomSpec((p,)), grid, 60.0).values > 0 for p in ph.primitives]
    np.testing.assert_array_equal(img.values > 0, masks[0] | masks[1])
    assert not (masks[0] & masks[1]).any()


def test_dental_crown_count_and_extent():
    grid = GridSpec(128, 128, 0.6)
    ph = dental_phantom(14, (3, 4, 10), grid)
    ti = [p for p in ph.primitives if p.material.name == "titanium"]
    assert len(ti) == 3
    x0, x1, y0, y1 = grid.bounds
    for p in ph.primitives:
        bx0, bx1, by0, by1 = p.shape.bbox()
        assert bx0 >= x0 and bx1 <= x1 and by0 >= y0 and by1 <= y1


def test_dental_sigma_bounded_without_crowns():
    grid = GridSpec(128, 128, 0.6)
    ph = dental_phantom(14, (), grid)
    _, sg = rasterize_pair(ph, grid, 55.0)
    bound = max(abs(np.diff(bundled_material(n).mu) / np.diff(bundled_material(n).energies)).max()
                for n in ("bone", "enamel"))
    assert np.abs(sg.values).max() <= bound


def test_crown_indices_validated():
    with pytest.raises(PhantomGeometryError):
        dental_layout(14, (14,))


def test_rasterize_basics():
    grid = GridSpec(32, 32, 1.0)
    assert not rasterize(PhantomSpec(()), grid, 60.0).values.any()
    ph = PhantomSpec((Primitive(Disk((0.0, 0.0), 8.0), constant_material("c", 0.37)),))
    img = rasterize(ph, grid, 60.0)
    assert set(np.unique(img.values)) == {0.0, 0.37}
    metal = PhantomSpec((Primitive(Disk((0.0, 0.0), 8.0), toy_metal()),))
    assert rasterize(metal, grid, 64.0).values.max() == 64.0


def test_rasterize_pair_air_and_titanium_sign():
    grid = GridSpec(64, 64, 1.0)
    ph = PhantomSpec((Primitive(Annulus((0.0, 0.0), 5.0, 10.0), bundled_material("titanium")),))
    mu, sg = rasterize_pair(ph, grid, 55.0)
    air = mu.values == 0
    assert (sg.values[air] == 0).all()
    assert (sg.values[~air] < 0).all()
    flat = PhantomSpec((Primitive(Disk((0.0, 0.0), 10.0), constant_material("c", 0.1)),))
    assert not rasterize_pair(flat, grid, 55.0)[1].values.any()


def test_layering_last_wins():
    grid = GridSpec(32, 32, 1.0)
    a = constant_material("a", 1.0)
    b = constant_material("b", 2.0)
    ph = PhantomSpec((Primitive(Disk((0.0, 0.0), 10.0), a), Primitive(Disk((3.0, 0.0), 5.0), b)))
    img = rasterize(ph, grid, 60.0).values
    inner = rasterize(PhantomSpec((ph.primitives[1],)), grid, 60.0).values > 0
    assert (img[inner] == 2.0).all()


@given(st.integers(0, 20))
def test_rasterize_loglog_consistency(k):
    m = bundled_material("bone")
    i = min(k, m.energies.size - 2)
    e0, e1 = m.energies[i], m.energies[i + 1]
    E = math.sqrt(e0 * e1)
    grid = GridSpec(16, 16, 1.0)
    ph = PhantomSpec((Primitive(Disk((0.0, 0.0), 5.0), m),))
    a = rasterize(ph, grid, e0).values
    b = rasterize(ph, grid, e1).values
    mid = rasterize(ph, grid, E).values
    np.testing.assert_allclose(mid, np.sqrt(a * b), rtol=1e-10, atol=0)


def test_material_mask_matches_titanium_pixels():
    grid = GridSpec(128, 128, 0.6)
    layout = dental_layout(14, (3, 5, 10), grid)
    mask = material_mask(layout.phantom, grid, ("titanium",))
    mu = rasterize(layout.phantom, grid, 55.0).values
    ti = attenuation_at(bundled_material("titanium"), 55.0)
    np.testing.assert_array_equal(mask, mu == ti)
