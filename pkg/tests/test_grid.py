import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmastem.grid import (
    ComplexField,
    GridError,
    GridGeometry,
    crop_window,
    dft2,
    frequency_grid,
    load_field,
    periodic_translate,
    rel_error,
    save_field,
    wrapped_offset,
)


def field(data, lx=1.0, ly=1.0):
    data = np.asarray(data, dtype=complex)
    return ComplexField(GridGeometry(data.shape[0], data.shape[1], lx, ly), data)


def random_field(n, m, seed):
    rng = np.random.default_rng(seed)
    return field(rng.normal(size=(n, m)) + 1j * rng.normal(size=(n, m)))


def test_geometry_validation():
    with pytest.raises(GridError):
        GridGeometry(1, 4, 1.0, 1.0)
    with pytest.raises(GridError):
        GridGeometry(4, 4, 0.0, 1.0)
    g = GridGeometry(128, 64, 12.8, 3.2)
    assert g.px == pytest.approx(0.1)
    assert g.qy == pytest.approx(1 / 3.2)


def test_field_rejects_nonfinite_and_wrong_shape():
    g = GridGeometry(4, 4, 1.0, 1.0)
    with pytest.raises(GridError):
        ComplexField(g, np.zeros((4, 5)))
    bad = np.zeros((4, 4), dtype=complex)
    bad[1, 2] = np.nan
    with pytest.raises(GridError):
        ComplexField(g, bad)


def test_dft_of_delta_is_ones():
    d = np.zeros((8, 8))
    d[0, 0] = 1
    np.testing.assert_array_equal(dft2(field(d)).data, np.ones((8, 8)))


def test_dft_round_trip():
    f = random_field(8, 8, 1)
    assert rel_error(dft2(dft2(f), "inverse"), f) < 1e-12


def test_dft_matches_naive_sum():
    x = np.array([[1, 2], [3, 4]], dtype=complex)
    n, m = x.shape
    naive = np.zeros_like(x)
    for kx in range(n):
        for ky in range(m):
            for ix in range(n):
                for iy in range(m):
                    naive[kx, ky] += x[ix, iy] * np.exp(-2j * np.pi * (kx * ix / n + ky * iy / m))
    np.testing.assert_allclose(dft2(field(x)).data, naive, atol=1e-12)
    np.testing.assert_allclose(dft2(field(x)).data, [[10, -2], [-4, 0]], atol=1e-12)


def test_dft_rejects_bad_direction():
    with pytest.raises(ValueError):
        dft2(random_field(4, 4, 0), "sideways")


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 2**31))
def test_parseval_and_linearity(n, m, seed):
    x, y = random_field(n, m, seed), random_field(n, m, seed + 1)
    fx = dft2(x).data
    assert np.linalg.norm(fx) ** 2 == pytest.approx(n * m * np.linalg.norm(x.data) ** 2, rel=1e-12)
    a, b = 0.3 - 1.2j, 2.0 + 0.5j
    lhs = dft2(x * a + y * b).data
    rhs = a * fx + b * dft2(y).data
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


def test_rel_error_basics():
    b = random_field(4, 4, 3)
    assert rel_error(b, b) == 0
    assert rel_error(b * 2, b, "euclidean") == pytest.approx(1)
    assert rel_error(b * 2, b, "supremum") == pytest.approx(1)
    with pytest.raises(GridError):
        rel_error(b, b * 0)


def test_rel_error_matches_direct_sum():
    a, b = random_field(4, 4, 5), random_field(4, 4, 6)
    diff = sum(abs(a.data[i, j] - b.data[i, j]) ** 2 for i in range(4) for j in range(4))
    ref = sum(abs(b.data[i, j]) ** 2 for i in range(4) for j in range(4))
    assert rel_error(a, b) == pytest.approx(np.sqrt(diff / ref), rel=1e-13)
    sup = max(abs(a.data[i, j] - b.data[i, j]) for i in range(4) for j in range(4))
    assert rel_error(a, b, "supremum") == pytest.approx(sup / np.abs(b.data).max(), rel=1e-13)


def test_periodic_translate():
    f = random_field(8, 8, 2)
    np.testing.assert_array_equal(periodic_translate(f, (0, 0)).data, f.data)
    np.testing.assert_array_equal(periodic_translate(f, (8, 8)).data, f.data)
    d = np.zeros((8, 8))
    d[1, 1] = 1
    out = periodic_translate(field(d), (2, 3)).data
    assert out[3, 4] == 1 and np.count_nonzero(out) == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(-20, 20), st.integers(-20, 20), st.integers(-20, 20), st.integers(-20, 20))
def test_translate_composes(a, b, c, d):
    f = random_field(6, 5, 0)
    two = periodic_translate(periodic_translate(f, (a, b)), (c, d))
    np.testing.assert_array_equal(two.data, periodic_translate(f, (a + c, b + d)).data)


def test_crop_window():
    f = random_field(8, 8, 4)
    np.testing.assert_array_equal(crop_window(f, (4, 4), (8, 8)).data, f.data)
    assert crop_window(f, (3, 5), (1, 1)).data[0, 0] == f.data[3, 5]
    c = crop_window(f, (7, 0), (4, 3))
    rows, cols = [5, 6, 7, 0], [7, 0, 1]
    np.testing.assert_array_equal(c.data, f.data[np.ix_(rows, cols)])
    assert c.origin == (5, 7)
    assert c.geometry.lx == pytest.approx(0.5)
    with pytest.raises(GridError):
        crop_window(f, (0, 0), (9, 2))


def test_frequency_grid_fft_order():
    kx, ky = frequency_grid(GridGeometry(4, 4, 2.0, 2.0))
    np.testing.assert_allclose(kx[:, 0], [0, 0.5, -1.0, -0.5])


def test_wrapped_offset():
    np.testing.assert_array_equal(wrapped_offset(np.arange(6), 6), [0, 1, 2, -3, -2, -1])


def test_field_io_round_trip(tmp_path):
    f = random_field(6, 4, 9)
    save_field(f, tmp_path / "f.bin")
    g = load_field(tmp_path / "f.bin")
    np.testing.assert_array_equal(g.data, f.data)
    assert g.geometry == f.geometry
    raw = (tmp_path / "f.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(GridError):
        load_field(tmp_path / "t.bin")
    (tmp_path / "h.bin").write_bytes(b"LMAFIELD 6\n" + raw.split(b"\n", 1)[1])
    with pytest.raises(GridError):
        load_field(tmp_path / "h.bin")
