import numpy as np
import pytest

from lmastem.grid import GridGeometry, dft2, periodic_translate
from lmastem.optics import (
    MicroscopeParams,
    OpticsError,
    aberration_chi,
    aperture,
    aperture_mask,
    build_probe,
    build_probe_at_pixel,
    electron_wavelength,
)
from lmastem.prism import build_frequency_set

from conftest import LAM, SIGMA


def test_params_validation():
    with pytest.raises(OpticsError):
        MicroscopeParams(0.0, 0, 0, 0.02, 1.0)
    with pytest.raises(OpticsError):
        MicroscopeParams(LAM, 0, 0, 0.0, 1.0)
    with pytest.raises(OpticsError):
        MicroscopeParams(LAM, 0, 0, 0.02, 0.0)


def test_wavelength_at_200kv():
    # the reference experiments quote 0.0250793 A for 200 kV
    assert electron_wavelength(200e3) == pytest.approx(0.0250793, abs=5e-7)


def test_chi_values(params):
    assert aberration_chi(np.array([0.0, 0.0]), params) == 0
    flat = MicroscopeParams(LAM, 0.0, 0.0, 0.026, SIGMA)
    k = np.random.default_rng(0).normal(size=(10, 2))
    np.testing.assert_array_equal(aberration_chi(k, flat), 0)
    # 1/2 pi Cs lam^3 k^4 - pi Z lam k^2 at |k| = 0.5, evaluated in extended precision
    assert aberration_chi(np.array([0.5, 0.0]), params) == pytest.approx(-1.97282086493106322, rel=1e-14)


def test_chi_is_radial(params):
    r = 0.7
    angles = np.linspace(0, 2 * np.pi, 13)
    k = np.stack([r * np.cos(angles), r * np.sin(angles)], axis=-1)
    vals = aberration_chi(k, params)
    np.testing.assert_allclose(vals, vals[0], rtol=1e-13)


def test_aperture_edges(params):
    assert aperture(np.array([0.0, 0.0]), params) == 1
    assert aperture(np.array([1.0, 0.0]), params) == 1
    edge = MicroscopeParams(0.5, 0, 0, 0.25, SIGMA)
    # lam |k| equals alpha_max exactly (both are exact binary fractions)
    assert aperture(np.array([0.5, 0.0]), edge) == 0


def test_probe_spectrum_modulus_is_aperture(params, geom64):
    mask = aperture_mask(geom64, params)
    for p in [(0, 0), (5, 17), (63, 1)]:
        spec = np.abs(dft2(build_probe_at_pixel(p, params, geom64)).data)
        scale = spec[mask].mean()
        np.testing.assert_allclose(spec, scale * mask, atol=1e-12 * scale)


def test_probe_unit_norm_and_translation(params, geom64):
    p0 = build_probe_at_pixel((0, 0), params, geom64)
    assert p0.norm() == pytest.approx(1, abs=1e-13)
    shifted = build_probe_at_pixel((7, 30), params, geom64)
    np.testing.assert_allclose(shifted.data, periodic_translate(p0, (7, 30)).data, atol=1e-14)


def test_build_probe_snaps_to_pixel(params, geom64):
    a = build_probe((1.02, 2.19), params, geom64)
    b = build_probe_at_pixel((5, 11), params, geom64)
    np.testing.assert_array_equal(a.data, b.data)


def test_support_matches_frequency_set(params, geom64):
    assert aperture_mask(geom64, params).sum() == len(build_frequency_set(geom64, params, 1))


def test_aperture_below_one_pixel_rejected(geom64):
    tiny = MicroscopeParams(LAM, 0, 0, 1e-4, SIGMA)
    with pytest.raises(OpticsError):
        aperture_mask(geom64, tiny)


def test_reference_scale_probe(params):
    g = GridGeometry(1024, 1024, 62.416, 62.416)
    p = build_probe_at_pixel((0, 0), params, g)
    assert p.norm() == pytest.approx(1, abs=1e-12)
    # aperture radius alpha/lam = 1.0367 1/A on a 1/62.416 grid: roughly pi r^2 pixels
    n = aperture_mask(g, params).sum()
    assert abs(n - np.pi * (0.026 / LAM * 62.416) ** 2) < 0.01 * n
