import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcac.core import ScalarField2D, pixel_grid
from mcac.errors import NonFiniteGradient
from mcac.shape_model import (HeavisideParams, RbfShapeModel, TrainConfig, default_sigma_grid,
                              eval_decision, eval_silhouette, fit_error, fit_gradient, fit_score,
                              heaviside, load_model, mask_centers, save_model, select_sigma,
                              sigma_scores, train)

H = HeavisideParams()


def disk(w=48, h=48, r=12.0, c=(24.0, 24.0)):
    g = pixel_grid(w, h)
    return ScalarField2D((np.hypot(g[..., 0] - c[0], g[..., 1] - c[1]) <= r).astype(float))


def test_decision_examples():
    m = RbfShapeModel([[2.0, 3.0]], [1.0], -0.5, 4.0)
    assert eval_decision(m, [2, 3]) == pytest.approx(0.5)
    m0 = RbfShapeModel([[0.0, 0.0]], [1.0], 0.0, 2.0)
    assert eval_decision(m0, [0, 2]) == pytest.approx(0.367879, abs=1e-6)


def test_decision_matches_term_by_term_sum(rng):
    m = RbfShapeModel(rng.normal(size=(3, 2)) * 5, rng.normal(size=3), rng.normal(), 3.3)
    for z in rng.normal(size=(20, 2)) * 6:
        oracle = m.bias
        for (px, py), a in zip(m.centers, m.weights):
            oracle += a * math.exp(-((z[0] - px) ** 2 + (z[1] - py) ** 2) / m.sigma ** 2)
        assert eval_decision(m, z) == pytest.approx(oracle, abs=1e-12)


def test_silhouette_closed_forms():
    m = RbfShapeModel([[0.0, 0.0]], [1.0], -1.0, 1.0)
    assert eval_silhouette(m, H, [0, 0]) == pytest.approx(0.5)
    assert heaviside(1.0, H) == pytest.approx(0.75)
    assert heaviside(2.5, HeavisideParams(2.5)) == pytest.approx(0.75)
    assert heaviside(1e12) == pytest.approx(1.0) and heaviside(-1e12) == pytest.approx(0.0)


@given(st.floats(-1e6, 1e6, allow_nan=False), st.floats(0.01, 10))
def test_silhouette_in_unit_interval(x, eps):
    v = heaviside(x, HeavisideParams(eps))
    assert 0.0 <= v <= 1.0


def test_fit_error_saturated_model_is_zero():
    mask = disk(r=10.5)
    # Pixel radii closest to 10.5 are 10.44 and 10.63; put the zero set in between.
    sigma, amp = 8.0, 1e12
    m = RbfShapeModel([[0.0, 0.0]], [amp], -amp * math.exp(-(10.5 / sigma) ** 2), sigma)
    assert fit_error(m, mask, origin=(24, 24)) < 1e-6


def test_fit_error_empty_model_counts_foreground():
    mask = disk()
    k = np.count_nonzero(mask.values)
    m = RbfShapeModel([[0.0, 0.0]], [0.0], -1e6, 5.0)
    assert fit_error(m, mask, origin=(24, 24)) == pytest.approx(k, rel=1e-5)


def test_fit_error_matches_per_pixel_oracle(rng):
    mask = disk(w=20, h=16, r=5, c=(9, 8))
    m = RbfShapeModel(rng.normal(size=(4, 2)) * 3, rng.uniform(0, 1, 4), -0.3, 3.0)
    total = 0.0
    for y in range(16):
        for x in range(20):
            phi = m.bias + sum(a * math.exp(-((x - 9 - px) ** 2 + (y - 8 - py) ** 2) / 9.0)
                               for (px, py), a in zip(m.centers, m.weights))
            he = 0.5 * (1 + 2 / math.pi * math.atan(phi))
            total += (mask.values[y, x] - he) ** 2
    assert fit_error(m, mask, origin=(9, 8)) == pytest.approx(total, rel=1e-9)


def test_fit_gradient_matches_finite_differences(rng):
    mask = disk(w=32, h=32, r=9, c=(16, 16))
    centers = np.array([[0, 0], [4, 0], [-4, 0], [0, 4], [0, -4]], float)
    for _ in range(10):
        m = RbfShapeModel(centers, rng.uniform(-0.5, 1.0, 5), rng.uniform(-0.8, 0.2), rng.uniform(3, 10))
        ga, gb = fit_gradient(m, mask, origin=(16, 16))
        g = np.append(ga, gb)
        theta = np.append(m.weights, m.bias)
        fd = np.empty_like(theta)
        for k in range(len(theta)):
            step = 1e-5 * max(1.0, abs(theta[k]))
            tp, tm = theta.copy(), theta.copy()
            tp[k] += step
            tm[k] -= step
            fp = fit_error(RbfShapeModel(centers, tp[:-1], tp[-1], m.sigma), mask, origin=(16, 16))
            fm = fit_error(RbfShapeModel(centers, tm[:-1], tm[-1], m.sigma), mask, origin=(16, 16))
            fd[k] = (fp - fm) / (2 * step)
        assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(fd)


def test_train_disk_reaches_frozen_score():
    mask = disk()
    centers = np.array([[0, 0], [6, 0], [-6, 0], [0, 6], [0, -6]], float)
    history = []
    m = train(RbfShapeModel.initial(centers, 12.0), mask, cfg=TrainConfig(history=history),
              origin=(24, 24))
    score = fit_score(m, mask, origin=(24, 24))
    assert score >= 0.9
    assert score == pytest.approx(0.9897451677315352, abs=1e-6)
    assert all(b <= a for a, b in zip(history, history[1:]))
    assert fit_error(m, mask, origin=(24, 24)) <= history[0]


def test_train_at_optimum_is_a_fixed_point():
    mask = disk(r=10.5)
    sigma, amp = 8.0, 1e12
    m0 = RbfShapeModel([[0.0, 0.0]], [amp], -amp * math.exp(-(10.5 / sigma) ** 2), sigma)
    m = train(m0, mask, origin=(24, 24))
    assert np.allclose(m.weights, m0.weights, rtol=1e-12) and m.bias == pytest.approx(m0.bias, rel=1e-12)


def test_train_rejects_outside_centers_and_nonfinite(monkeypatch):
    mask = disk()
    with pytest.raises(ValueError):
        train(RbfShapeModel.initial([[20.0, 20.0]], 5.0), mask, origin=(24, 24))
    from mcac import shape_model
    monkeypatch.setattr(shape_model._FitProblem, "error_and_grad",
                        lambda self, theta: (1.0, np.full_like(theta, np.nan)))
    with pytest.raises(NonFiniteGradient):
        train(RbfShapeModel.initial([[0.0, 0.0]], 5.0), mask, origin=(24, 24))


def test_select_sigma_grid_and_ties():
    grid = default_sigma_grid()
    assert len(grid) == 191 and grid[0] == 1.0 and grid[-1] == 20.0
    assert np.allclose(np.diff(grid), 0.1)
    mask = disk()
    c = np.zeros((1, 2))
    assert select_sigma(mask, c, candidates=[7.3], origin=(24, 24)) == 7.3
    scores = sigma_scores(mask, c, H, [5.0, 5.0], origin=(24, 24))
    assert scores[0] == scores[1]
    best = select_sigma(mask, c, candidates=[9.0, 3.0, 6.0], origin=(24, 24))
    s = sigma_scores(mask, c, H, [3.0, 6.0, 9.0], origin=(24, 24))
    assert best == [3.0, 6.0, 9.0][int(np.argmax(s))]


@pytest.mark.xfail(strict=True, reason="fixed-weight selection disagrees with post-training ranking; "
                                       "see notes on the sigma-selection criterion")
def test_select_sigma_one_center_disk_top3():
    mask = disk(r=10)
    c = np.zeros((1, 2))
    grid = default_sigma_grid()
    chosen = select_sigma(mask, c, origin=(24, 24))
    post = [fit_score(train(RbfShapeModel.initial(c, s), mask, origin=(24, 24)), mask, origin=(24, 24))
            for s in grid]
    top3 = grid[np.argsort(-np.asarray(post), kind="stable")[:3]]
    assert chosen in top3


def test_mask_centers_inside_with_margin():
    mask = disk()
    pts = mask_centers(mask, spacing=4, margin=3, origin=(24, 24))
    r = np.hypot(pts[:, 0], pts[:, 1])
    assert len(pts) > 10 and np.all(r <= 12 - 2)
    assert np.all(np.mod(pts, 4) == 0)
    with pytest.raises(ValueError):
        mask_centers(mask, spacing=4, margin=50, origin=(24, 24))


def test_model_file_round_trip(tmp_path, rng):
    m = RbfShapeModel(rng.normal(size=(4, 2)), rng.normal(size=4), -0.123456789, 7.7)
    save_model(m, tmp_path / "m.txt")
    lines = (tmp_path / "m.txt").read_text().splitlines()
    assert lines[:2] == ["MCAC-SHAPE 1", "4"]
    back = load_model(tmp_path / "m.txt")
    assert np.array_equal(back.centers, m.centers) and np.array_equal(back.weights, m.weights)
    assert back.bias == m.bias and back.sigma == m.sigma
    (tmp_path / "bad.txt").write_text("nope\n")
    with pytest.raises(ValueError):
        load_model(tmp_path / "bad.txt")
