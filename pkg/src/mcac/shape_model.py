"""Gaussian RBF shape decision function and its training from a silhouette.

The decision function is

    phi(z) = sum_i alpha_i * exp(-|z - p_i|^2 / sigma^2) + beta

and the model silhouette is ``H(phi)`` for a smoothed Heaviside ``H``.  Training
minimises the squared silhouette mismatch summed over every pixel of the mask.
Template coordinates put the origin at the mask's foreground centroid unless an
explicit ``origin`` (pixel position of the template origin) is given.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import ScalarField2D, as_points, bilinear_sample, pixel_grid
from .errors import NonFiniteGradient

log = logging.getLogger(__name__)

DEFAULT_BIAS = -0.25
SHAPE_HEADER = "MCAC-SHAPE 1"


@dataclass(frozen=True)
class HeavisideParams:
    epsilon_h: float = 1.0

    def __post_init__(self):
        if not self.epsilon_h > 0:
            raise ValueError("epsilon_h must be > 0")


def heaviside(x, h: HeavisideParams = HeavisideParams()):
    """0.5 * (1 + (2/pi) * arctan(x / eps))."""
    return 0.5 + np.arctan(np.asarray(x, dtype=float) / h.epsilon_h) / math.pi


def heaviside_prime(x, h: HeavisideParams = HeavisideParams()):
    eps = h.epsilon_h
    x = np.asarray(x, dtype=float)
    return eps / (math.pi * (eps * eps + x * x))


@dataclass(frozen=True, eq=False)
class RbfShapeModel:
    centers: np.ndarray
    weights: np.ndarray
    bias: float
    sigma: float

    def __post_init__(self):
        c = np.array(self.centers, dtype=float).reshape(-1, 2)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if len(c) < 1 or len(c) != len(w):
            raise ValueError(f"need N >= 1 centers with one weight each, got {len(c)} / {len(w)}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be finite and > 0, got {self.sigma}")
        c.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def n(self) -> int:
        return len(self.weights)

    @classmethod
    def initial(cls, centers, sigma: float, bias: float = DEFAULT_BIAS) -> RbfShapeModel:
        """Fixed starting point shared by training and sigma selection: alpha_i = 1/N."""
        centers = np.asarray(centers, dtype=float).reshape(-1, 2)
        return cls(centers, np.full(len(centers), 1.0 / len(centers)), bias, sigma)

    def kernels(self, z) -> np.ndarray:
        """exp(-|z - p_i|^2 / sigma^2) with the center index on the last axis."""
        z = as_points(z)
        d = z[..., None, :] - self.centers
        return np.exp(-np.einsum("...k,...k->...", d, d) / self.sigma ** 2)


def eval_decision(m: RbfShapeModel, z):
    z = as_points(z)
    out = m.kernels(z) @ m.weights + m.bias
    return float(out) if z.ndim == 1 else out


def eval_silhouette(m: RbfShapeModel, h: HeavisideParams, z):
    return heaviside(eval_decision(m, z), h)


def mask_centroid(mask: ScalarField2D) -> np.ndarray:
    ys, xs = np.nonzero(mask.values > 0.5)
    return np.array([xs.mean(), ys.mean()])


def template_coords(mask: ScalarField2D, origin=None) -> np.ndarray:
    """Pixel lattice of ``mask`` expressed in template coordinates, shape (h, w, 2)."""
    if origin is None:
        origin = mask_centroid(mask)
    return pixel_grid(mask.width, mask.height) - np.asarray(origin, dtype=float)


def mask_centers(mask: ScalarField2D, spacing: float = 6.0, margin: float = 2.0, origin=None) -> np.ndarray:
    """Kernel centers on a square lattice through the template origin.

    Keeps lattice points whose pixel lies at least ``margin`` px inside the
    foreground.  Returned in template coordinates.
    """
    if origin is None:
        origin = mask_centroid(mask)
    origin = np.asarray(origin, dtype=float)
    dist = ndimage.distance_transform_edt(mask.values > 0.5)
    nx = np.arange(np.ceil(-origin[0] / spacing), np.floor((mask.width - 1 - origin[0]) / spacing) + 1)
    ny = np.arange(np.ceil(-origin[1] / spacing), np.floor((mask.height - 1 - origin[1]) / spacing) + 1)
    gx, gy = np.meshgrid(nx * spacing, ny * spacing)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    pix = np.rint(pts + origin).astype(int)
    keep = dist[pix[:, 1], pix[:, 0]] >= margin
    if not np.any(keep):
        raise ValueError("no lattice point lies inside the mask; reduce spacing or margin")
    return pts[keep]


def _check_mask(mask: ScalarField2D):
    v = mask.values
    if not np.all((v == 0) | (v == 1)):
        raise ValueError("silhouette mask must be binary {0, 1}")
    if v.min() == v.max():
        raise ValueError("silhouette mask needs both foreground and background pixels")


class _FitProblem:
    """Kernel matrix of a model's centers over a mask's lattice, reused across iterations."""

    def __init__(self, centers, sigma, mask: ScalarField2D, h: HeavisideParams, origin=None):
        _check_mask(mask)
        self.h = h
        self.target = mask.values.ravel()
        z = template_coords(mask, origin).reshape(-1, 2)
        probe = RbfShapeModel(centers, np.zeros(len(centers)), 0.0, sigma)
        self.K = probe.kernels(z)  # (P, N)

    def error(self, theta) -> float:
        phi = self.K @ theta[:-1] + theta[-1]
        r = heaviside(phi, self.h) - self.target
        return float(r @ r)

    def error_and_grad(self, theta):
        phi = self.K @ theta[:-1] + theta[-1]
        r = heaviside(phi, self.h) - self.target
        s = 2.0 * r * heaviside_prime(phi, self.h)
        grad = np.concatenate([self.K.T @ s, [s.sum()]])
        return float(r @ r), grad


def fit_error(m: RbfShapeModel, mask: ScalarField2D, h: HeavisideParams = HeavisideParams(),
              origin=None) -> float:
    """Sum over pixels of (H_o - H(phi))^2 with unit pixel area."""
    prob = _FitProblem(m.centers, m.sigma, mask, h, origin)
    return prob.error(np.append(m.weights, m.bias))


def fit_gradient(m: RbfShapeModel, mask: ScalarField2D, h: HeavisideParams = HeavisideParams(),
                 origin=None) -> tuple[np.ndarray, float]:
    """Gradient of :func:`fit_error` with respect to (alpha, beta)."""
    prob = _FitProblem(m.centers, m.sigma, mask, h, origin)
    _, g = prob.error_and_grad(np.append(m.weights, m.bias))
    return g[:-1], float(g[-1])


def fit_score(m: RbfShapeModel, mask: ScalarField2D, h: HeavisideParams = HeavisideParams(),
              origin=None) -> float:
    """1 - fit_error / foreground pixel count."""
    return 1.0 - fit_error(m, mask, h, origin) / float(np.count_nonzero(mask.values > 0.5))


@dataclass
class TrainConfig:
    step: float = 1e-3
    max_iters: int = 3000
    tol: float = 1e-7  # relative decrease per iteration below which training stops
    armijo: float = 1e-4
    max_halvings: int = 60
    history: list[float] | None = field(default=None, repr=False)


def train(m0: RbfShapeModel, mask: ScalarField2D, h: HeavisideParams = HeavisideParams(),
          cfg: TrainConfig | None = None, origin=None) -> RbfShapeModel:
    """Gradient descent on (alpha, beta) with Armijo backtracking.

    Every accepted iterate has fit error no larger than its predecessor.  When
    ``cfg.history`` is a list, the fit error of the start point and of each
    accepted iterate is appended to it.
    """
    cfg = cfg or TrainConfig()
    if origin is None:
        origin = mask_centroid(mask)
    inside = bilinear_sample(mask, m0.centers + np.asarray(origin, dtype=float))
    if np.any(np.atleast_1d(inside) < 0.5):
        raise ValueError("all centers must lie inside the mask foreground")

    prob = _FitProblem(m0.centers, m0.sigma, mask, h, origin)
    theta = np.append(m0.weights, m0.bias)
    err, grad = prob.error_and_grad(theta)
    history = cfg.history
    if history is not None:
        history.append(err)
    step = cfg.step
    for it in range(cfg.max_iters):
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"non-finite training gradient at iteration {it}")
        gg = float(grad @ grad)
        if gg == 0.0 or err == 0.0:
            break
        for _ in range(cfg.max_halvings):
            cand = theta - step * grad
            cand_err = prob.error(cand)
            if cand_err <= err - cfg.armijo * step * gg:
                break
            step *= 0.5
        else:
            log.debug("line search exhausted at iteration %d", it)
            break
        theta = cand
        prev, (err, grad) = err, prob.error_and_grad(theta)
        if history is not None:
            history.append(err)
        step *= 2.0
        if prev - err <= cfg.tol * max(prev, 1e-300):
            break
    return replace(m0, weights=theta[:-1], bias=float(theta[-1]))


def select_sigma(mask: ScalarField2D, centers, h: HeavisideParams = HeavisideParams(),
                 candidates=None, origin=None) -> float:
    """Pick the bandwidth whose fixed-weight initial model fits the mask best.

    Ties go to the smaller sigma.
    """
    if candidates is None:
        candidates = default_sigma_grid()
    cands = np.sort(np.asarray(candidates, dtype=float))
    if cands.size == 0 or np.any(cands <= 0):
        raise ValueError("sigma candidates must be non-empty and positive")
    scores = sigma_scores(mask, centers, h, cands, origin)
    return float(cands[int(np.argmax(scores))])


def sigma_scores(mask, centers, h, candidates, origin=None) -> np.ndarray:
    return np.array([fit_score(RbfShapeModel.initial(centers, s), mask, h, origin)
                     for s in candidates])


def default_sigma_grid() -> np.ndarray:
    """{1, 1.1, ..., 20}: 191 candidates."""
    return np.round(np.arange(10, 201) / 10.0, 1)


def rasterize_decision(m: RbfShapeModel, width: int, height: int, origin) -> ScalarField2D:
    z = pixel_grid(width, height) - np.asarray(origin, dtype=float)
    return ScalarField2D(eval_decision(m, z.reshape(-1, 2)).reshape(height, width))


# -- serialization ---------------------------------------------------------

def save_model(m: RbfShapeModel, path) -> None:
    lines = [SHAPE_HEADER, str(m.n), repr(m.sigma), repr(m.bias)]
    lines += [f"{x!r} {y!r} {a!r}" for (x, y), a in zip(m.centers.tolist(), m.weights.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> RbfShapeModel:
    lines = [ln.strip() for ln in Path(path).read_text(errors="replace").splitlines() if ln.strip()]
    if not lines or lines[0] != SHAPE_HEADER:
        raise ValueError(f"{path}: missing '{SHAPE_HEADER}' header")
    n = int(lines[1])
    sigma = float(lines[2])
    bias = float(lines[3])
    rows = np.array([[float(t) for t in ln.split()] for ln in lines[4:4 + n]]).reshape(-1, 3)
    if len(rows) != n:
        raise ValueError(f"{path}: expected {n} center lines, found {len(rows)}")
    return RbfShapeModel(rows[:, :2], rows[:, 2], bias, sigma)
