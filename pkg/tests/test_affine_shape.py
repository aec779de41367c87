import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from mcac.affine_shape import (PosedShape, d_phi_s_d_ainv, d_phi_s_d_b, eval_phi_noninvariant,
                               eval_phi_s, grad_z_phi_s, invariance_residual, rasterize,
                               snap_to_zero_set)
from mcac.contour import extract_contour
from mcac.core import AffineMap, bilinear_sample, pixel_grid
from mcac.errors import SingularMap
from mcac.shape_model import RbfShapeModel, eval_decision, rasterize_decision
from mcac.synth import random_affine

CENTER = (64.0, 64.0)


def small_model(rng, n=5):
    return RbfShapeModel(rng.normal(size=(n, 2)) * 6, rng.uniform(0.1, 1.0, n), -0.3, 6.0)


def random_map(rng):
    return random_affine(rng, (0.5, 2.0), center=(3.0, -2.0), shift=5.0)


def test_identity_pose_equals_decision(rng):
    m = small_model(rng)
    s = PosedShape(m, AffineMap.identity())
    z = rng.normal(size=(50, 2)) * 10
    assert np.allclose(eval_phi_s(s, z), eval_decision(m, z), atol=1e-15)
    assert np.allclose(eval_phi_noninvariant(s, z), eval_decision(m, z), atol=1e-15)


def test_term_by_term_oracle(rng):
    m = small_model(rng)
    for _ in range(10):
        pose = random_map(rng)
        ai = np.linalg.inv(pose.a)
        s = PosedShape(m, pose)
        z = rng.normal(size=2) * 8
        oracle = m.bias
        for p, a in zip(m.centers, m.weights):
            v = ai @ z - p - ai @ pose.b
            oracle += a * math.exp(-(v @ v) / m.sigma ** 2)
        assert eval_phi_s(s, z) == pytest.approx(oracle, abs=1e-12)


def test_zero_set_maps_to_zero_set(leaf):
    ident = PosedShape(leaf.model, AffineMap.identity())
    ref = extract_contour(rasterize_decision(leaf.model, 128, 128, CENTER))[0].points - CENTER
    zc = snap_to_zero_set(ident, ref)
    assert np.abs(eval_decision(leaf.model, zc)).max() < 1e-12
    rng = np.random.default_rng(5)
    for _ in range(20):
        pose = random_affine(rng, center=CENTER, shift=6)
        zs = zc @ pose.a.T + pose.b
        assert np.abs(eval_phi_s(PosedShape(leaf.model, pose), zs)).max() <= 1e-9


@given(st.floats(0, 2 * math.pi), st.floats(-20, 20), st.floats(-20, 20))
def test_orthogonal_pose_equivalence(theta, bx, by):
    m = RbfShapeModel([[0, 0], [4, 1], [-3, 2]], [0.5, 0.3, 0.4], -0.2, 5.0)
    c, s_ = math.cos(theta), math.sin(theta)
    s = PosedShape(m, AffineMap([[c, -s_], [s_, c]], [bx, by]))
    z = np.array([[bx + 1.0, by - 2.0], [bx - 3.5, by + 0.5], [0.0, 0.0]])
    assert np.allclose(eval_phi_s(s, z), eval_phi_noninvariant(s, z), atol=1e-9)


def test_shear_breaks_noninvariant_form(leaf):
    ref = extract_contour(rasterize_decision(leaf.model, 128, 128, CENTER))[0]
    ref = type(ref)(ref.points - CENTER, ref.closed)
    s = PosedShape(leaf.model, AffineMap([[1, 1], [0, 1]], [0, 0]))
    inv = invariance_residual(s, ref)
    non = invariance_residual(s, ref, invariant=False)
    assert non > 10 * inv


def test_rasterize_consistency(rng):
    m = small_model(rng)
    s = PosedShape(m, random_map(rng))
    f = rasterize(s, 2, 2)
    pts = pixel_grid(2, 2).reshape(-1, 2)
    assert np.array_equal(f.values.ravel(), eval_phi_s(s, pts))
    f = rasterize(s, 9, 7)
    pts = pixel_grid(9, 7).reshape(-1, 2)
    assert np.array_equal(bilinear_sample(f, pts), eval_phi_s(s, pts))


def test_trained_raster_has_one_band(leaf):
    f = rasterize(PosedShape(leaf.model, AffineMap(np.eye(2), CENTER)), 128, 128)
    assert ndimage.label(f.values > 0)[1] == 1
    assert ndimage.label(f.values <= 0)[1] == 1


def fd_ainv(s, z, h=1e-6):
    out = np.zeros((len(z), 2, 2))
    b = s.pose.b
    for i in range(2):
        for j in range(2):
            d = np.zeros((2, 2))
            d[i, j] = h
            sp = PosedShape.from_inverse(s.model, s.a_inv + d, b)
            sm = PosedShape.from_inverse(s.model, s.a_inv - d, b)
            out[:, i, j] = (eval_phi_s(sp, z) - eval_phi_s(sm, z)) / (2 * h)
    return out


def fd_b(s, z, h=1e-5):
    out = np.zeros((len(z), 2))
    for i in range(2):
        d = np.zeros(2)
        d[i] = h
        sp = PosedShape.from_inverse(s.model, s.a_inv, s.pose.b + d)
        sm = PosedShape.from_inverse(s.model, s.a_inv, s.pose.b - d)
        out[:, i] = (eval_phi_s(sp, z) - eval_phi_s(sm, z)) / (2 * h)
    return out


def test_parameter_derivatives_match_finite_differences(rng):
    m = small_model(rng)
    for _ in range(10):
        s = PosedShape(m, random_map(rng))
        z = s.pose(rng.normal(size=(1, 2)) * 5)
        ga, fa = d_phi_s_d_ainv(s, z), fd_ainv(s, z)
        gb, fb = d_phi_s_d_b(s, z), fd_b(s, z)
        assert np.linalg.norm(ga - fa) <= 1e-4 * np.linalg.norm(fa)
        assert np.linalg.norm(gb - fb) <= 1e-4 * np.linalg.norm(fb)
        gz = grad_z_phi_s(s, z)
        assert np.allclose(gz, -gb, rtol=1e-12, atol=1e-15)


def test_printed_forms_disagree_with_finite_differences(rng):
    m = small_model(rng)
    s = PosedShape(m, AffineMap([[1.1, 0.2], [-0.1, 0.9]], [7.0, -4.0]))
    z = s.pose(np.array([[1.0, 2.0]]))
    fa, fb = fd_ainv(s, z), fd_b(s, z)
    assert np.linalg.norm(d_phi_s_d_ainv(s, z, as_printed=True) - fa) > 0.1 * np.linalg.norm(fa)
    assert np.allclose(d_phi_s_d_b(s, z, as_printed=True), -fb, rtol=1e-6)


def test_one_kernel_hand_values():
    m = RbfShapeModel([[0.0, 0.0]], [1.0], 0.0, 1.0)
    s = PosedShape(m, AffineMap.identity())
    z = np.array([1.0, 0.0])
    e = math.exp(-1)
    assert np.allclose(d_phi_s_d_ainv(s, z), [[-2 * e, 0], [0, 0]], atol=1e-15)
    assert np.allclose(d_phi_s_d_b(s, z), [2 * e, 0], atol=1e-15)
    assert np.allclose(d_phi_s_d_b(s, z, as_printed=True), [-2 * e, 0], atol=1e-15)
    assert np.allclose(d_phi_s_d_b(s, np.zeros(2)), 0, atol=0)
    far = np.array([500.0, 500.0])
    assert np.abs(d_phi_s_d_ainv(s, far)).max() <= 1e-12


def test_singular_pose_rejected():
    m = RbfShapeModel([[0.0, 0.0]], [1.0], 0.0, 1.0)
    with pytest.raises(SingularMap):
        PosedShape(m, AffineMap([[1, 1], [1, 1]], [0, 0]))


def test_invariance_residual_over_random_poses(leaf):
    ref = extract_contour(rasterize_decision(leaf.model, 128, 128, CENTER))[0]
    ref_pts = ref.points - CENTER
    grid_max = np.abs(rasterize_decision(leaf.model, 128, 128, CENTER).values).max()
    base = invariance_residual(PosedShape(leaf.model, AffineMap.identity()), ref_pts)
    assert base == pytest.approx(np.abs(eval_decision(leaf.model, ref_pts)).max())
    snapped = snap_to_zero_set(PosedShape(leaf.model, AffineMap.identity()), ref_pts)
    rng = np.random.default_rng(11)
    wins = 0
    for _ in range(100):
        s = PosedShape(leaf.model, random_affine(rng, center=CENTER, shift=6))
        inv = invariance_residual(s, ref_pts)
        assert inv == pytest.approx(base, abs=1e-9)
        assert invariance_residual(s, snapped) <= 1e-6 * grid_max
        wins += invariance_residual(s, ref_pts, invariant=False) > inv
    assert wins >= 95
