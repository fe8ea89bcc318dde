import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from inrmar.physics import (EnergyRangeError, Material, Spectrum, TableParseError, attenuation_at,
                            bundled_material, bundled_spectrum, constant_material, effective_pair,
                            load_spectrum, make_bichromatic, make_uniform, make_uniform_gauss, toy_metal)


def test_knot_values_are_exact():
    m = bundled_material("titanium")
    for E, mu in zip(m.energies, m.mu):
        assert attenuation_at(m, E) == mu


def test_toy_metal_knots():
    assert attenuation_at(toy_metal(), 64.0) == 64.0
    assert attenuation_at(toy_metal(), 80.0) == 5.0


def test_loglog_geometric_mean():
    m = Material("w", np.array([40.0, 90.0]), np.array([0.03, 0.018]))
    E = math.sqrt(40.0 * 90.0)
    assert attenuation_at(m, E) == pytest.approx(math.sqrt(0.03 * 0.018), rel=1e-12)


def test_out_of_range_energy():
    with pytest.raises(EnergyRangeError):
        attenuation_at(bundled_material("water"), 5.0)


def test_effective_pair_flat_and_toy():
    assert effective_pair(constant_material("c", 0.2), 50.0).sigma0 == 0.0
    pair = effective_pair(toy_metal(), 72.0, 8.0)
    assert pair.sigma0 == pytest.approx((5.0 - 64.0) / 16.0, abs=1e-14)
    expected = math.exp(math.log(64) + math.log(72 / 64) / math.log(80 / 64) * (math.log(5) - math.log(64)))
    assert pair.mu0 == pytest.approx(expected, rel=1e-14)


def test_bichromatic():
    s = make_bichromatic(64, 80, 0.5)
    np.testing.assert_array_equal(s.energies, [64, 80])
    np.testing.assert_array_equal(s.weights, [0.5, 0.5])
    assert make_bichromatic(64, 80, 1.0).mean_energy == 64.0
    with pytest.raises(ValueError):
        make_bichromatic(80, 64, 0.5)


def test_uniform_two_lines():
    s = make_uniform(70, 10, 2)
    np.testing.assert_array_equal(s.energies, [60, 80])
    np.testing.assert_array_equal(s.weights, [0.5, 0.5])


@given(st.floats(30, 90), st.floats(0.5, 20), st.integers(2, 3000))
def test_uniform_mean_is_center(E0, hw, n):
    for placement in ("endpoints", "cells"):
        assert make_uniform(E0, hw, n, placement).mean_energy == pytest.approx(E0, abs=1e-12 * E0 * 10)


def test_gauss_uniform_moments():
    s = make_uniform_gauss(60.0, 15.0)
    assert s.mean_energy == pytest.approx(60.0, abs=1e-12)
    assert s.std_energy == pytest.approx(15.0 / math.sqrt(3), rel=1e-12)


def test_bundled_spectrum():
    s = bundled_spectrum()
    assert abs(s.weights.sum() - 1.0) < 1e-12
    assert s.energies.max() == 100.0


def test_spectrum_parse_errors(tmp_path):
    p = tmp_path / "neg.txt"
    p.write_text("# keV weight\n20 1\n30 -0.5\n")
    with pytest.raises(TableParseError, match=":3"):
        load_spectrum(p)
    p.write_text("20 1\nabc 2\n")
    with pytest.raises(TableParseError, match=":2"):
        load_spectrum(p)
    p.write_text("20 1 3\n")
    with pytest.raises(TableParseError):
        load_spectrum(p)


def test_spectrum_normalizes_and_validates():
    s = Spectrum([10, 20, 30], [1, 2, 1])
    np.testing.assert_allclose(s.weights, [0.25, 0.5, 0.25])
    with pytest.raises(ValueError):
        Spectrum([10, 10], [1, 1])
    with pytest.raises(ValueError):
        Spectrum([10, 20], [1, -1])


@given(st.lists(st.floats(1e-3, 10.0), min_size=1, max_size=30))
def test_spectrum_weights_sum_to_one(ws):
    s = Spectrum(np.arange(len(ws)) + 20.0, ws)
    assert abs(s.weights.sum() - 1.0) < 1e-12


@given(st.floats(20.0, 120.0))
def test_interpolation_monotone_between_knots(E):
    # bundled attenuation tables decrease with energy
    for name in ("water", "bone", "enamel", "titanium"):
        m = bundled_material(name)
        i = min(np.searchsorted(m.energies, E, side="right") - 1, m.energies.size - 2)
        lo, hi = m.mu[i + 1], m.mu[i]
        v = attenuation_at(m, E)
        assert lo - 1e-15 <= v <= hi + 1e-15


@given(st.floats(40.0, 80.0), st.floats(1.0, 3.5))
def test_sigma0_converges_quadratically(E0, p):
    # power law mu = E^-p tabulated densely enough that log-log is exact
    e = np.linspace(20.0, 120.0, 21)
    m = Material("pl", e, e ** -p)
    exact = -p * E0 ** (-p - 1)
    err1 = abs(effective_pair(m, E0, 1.0).sigma0 - exact)
    err2 = abs(effective_pair(m, E0, 0.5).sigma0 - exact)
    assert err1 <= abs(exact) * 1e-2
    assert err2 <= err1 / 3.0 + 1e-15


def test_bundled_titanium_slope_negative():
    assert effective_pair(bundled_material("titanium"), 55.0).sigma0 < 0
