import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcac.core import (AffineMap, ScalarField2D, apply_affine, bilinear_sample, central_gradient,
                       compose_affine, invert_affine, pixel_grid, read_pgm, read_raw_field,
                       write_pgm, write_raw_field)
from mcac.errors import DimensionMismatch, SingularMap

coord = st.floats(-50, 50, allow_nan=False)


def linear_field(fn, w=16, h=12):
    g = pixel_grid(w, h)
    return ScalarField2D(fn(g[..., 0], g[..., 1]))


def test_apply_identity_and_scaling():
    assert np.allclose(apply_affine(AffineMap.identity(), [3, 4]), [3, 4])
    assert np.allclose(apply_affine(AffineMap(2 * np.eye(2), [0, 0]), [1, 1]), [2, 2])


def test_invert_diagonal_closed_form():
    inv = invert_affine(AffineMap(np.diag([2.0, 0.5]), [1, 0]))
    assert np.allclose(inv.a, np.diag([0.5, 2.0]))
    assert np.allclose(inv.b, [-0.5, 0])
    ident = invert_affine(AffineMap.identity())
    assert np.array_equal(ident.a, np.eye(2)) and np.array_equal(ident.b, np.zeros(2))


def test_invert_rejects_singular():
    with pytest.raises(SingularMap):
        invert_affine(AffineMap([[1, 2], [2, 4]], [0, 0]))
    with pytest.raises(SingularMap):
        invert_affine(AffineMap(1e-4 * np.eye(2), [0, 0]))


def test_round_trip_random_maps(rng):
    worst = 0.0
    for _ in range(100):
        while True:
            a = rng.normal(size=(2, 2))
            if 0.2 <= abs(np.linalg.det(a)) <= 5:
                break
        m = AffineMap(a, rng.normal(scale=20, size=2))
        z = rng.uniform(-100, 100, size=(10, 2))
        worst = max(worst, np.abs(apply_affine(invert_affine(m), apply_affine(m, z)) - z).max())
        c = compose_affine(invert_affine(m), m)
        assert np.allclose(c.a, np.eye(2), atol=1e-9) and np.allclose(c.b, 0, atol=1e-9)
    assert worst <= 1e-9


@given(st.lists(coord, min_size=6, max_size=6), coord, coord)
def test_round_trip_property(p, x, y):
    m = AffineMap.from_params(p)
    if abs(m.det) < 0.05:
        return
    z = np.array([x, y])
    back = apply_affine(invert_affine(m), apply_affine(m, z))
    scale = 1 + np.abs(p).max() / abs(m.det)
    assert np.allclose(back, z, atol=1e-9 * scale ** 2 * 100)


def test_params_round_trip():
    m = AffineMap([[1, 2], [3, 4]], [5, 6])
    assert np.array_equal(m.params(), [1, 2, 3, 4, 5, 6])
    back = AffineMap.from_params(m.params())
    assert np.array_equal(back.a, m.a) and np.array_equal(back.b, m.b)


def test_bilinear_lattice_midpoint_and_clamp():
    v = np.zeros((6, 5))
    v[3, 2] = 7.0
    f = ScalarField2D(v)
    assert bilinear_sample(f, [2, 3]) == 7.0
    lin = linear_field(lambda x, y: 3 * x + 1)
    assert bilinear_sample(lin, [1.5, 0]) == pytest.approx(5.5)
    v2 = np.arange(20.0).reshape(4, 5)
    assert bilinear_sample(ScalarField2D(v2), [-5, -5]) == v2[0, 0]
    assert bilinear_sample(ScalarField2D(v2), [99, 99]) == v2[-1, -1]


def test_sampling_consistency_on_every_lattice_point(rng):
    v = rng.normal(size=(7, 9))
    f = ScalarField2D(v)
    pts = pixel_grid(9, 7).reshape(-1, 2)
    assert np.array_equal(bilinear_sample(f, pts), v.ravel())


def test_central_gradient_examples():
    assert np.allclose(central_gradient(ScalarField2D(np.full((5, 5), 3.0)), [2, 2]), 0)
    fx = linear_field(lambda x, y: x)
    assert np.allclose(central_gradient(fx, [4.3, 5.7]), [1, 0])
    quad = linear_field(lambda x, y: x ** 2, w=24)
    assert central_gradient(quad, [10, 3])[0] == pytest.approx(20.0, abs=1e-9)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5),
       st.integers(1, 14), st.integers(1, 10))
def test_gradient_exact_on_affine_fields(a, b, c, x, y):
    f = linear_field(lambda xx, yy: a * xx + b * yy + c)
    assert np.allclose(central_gradient(f, [x, y]), [a, b], atol=1e-9)


def test_field_validation():
    with pytest.raises(DimensionMismatch):
        ScalarField2D(np.zeros((1, 5)))
    with pytest.raises(ValueError):
        ScalarField2D(np.array([[0, np.nan], [0, 0]]))
    f = ScalarField2D(np.zeros((3, 4)))
    assert (f.width, f.height) == (4, 3)
    with pytest.raises(ValueError):
        f.values[0, 0] = 1


def test_pgm_round_trip_8_and_16_bit(tmp_path, rng):
    v8 = rng.integers(0, 256, size=(5, 7)).astype(float)
    write_pgm(tmp_path / "a.pgm", v8)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm").values, v8)
    v16 = rng.integers(0, 65536, size=(4, 3)).astype(float)
    write_pgm(tmp_path / "b.pgm", v16, maxval=65535)
    assert np.array_equal(read_pgm(tmp_path / "b.pgm").values, v16)
    raw = (tmp_path / "b.pgm").read_bytes()
    assert raw.startswith(b"P5\n3 4\n65535\n")


def test_raw_field_layout(tmp_path, rng):
    v = rng.normal(size=(3, 4))
    write_raw_field(tmp_path / "f.raw", v)
    buf = (tmp_path / "f.raw").read_bytes()
    assert buf[:4] == b"MCF1" and len(buf) == 16 + 8 * 12
    assert int.from_bytes(buf[4:8], "little") == 4 and int.from_bytes(buf[8:12], "little") == 3
    assert np.array_equal(read_raw_field(tmp_path / "f.raw").values, v)
