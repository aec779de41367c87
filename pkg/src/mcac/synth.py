"""Synthetic templates, affine test suites and noise suites.

Every generator takes an explicit seed and draws all randomness from one
``numpy.random.Generator``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .active_contour import gaussian_blur
from .core import AffineMap, ScalarField2D, apply_affine, invert_affine, pixel_grid
from .matching import build_cost_matrix, greedy_correspondences

FOREGROUND = 200.0
BACKGROUND = 60.0
EDGE_BLUR = 1.0


def _polygon_centroid(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2.0
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


@dataclass(frozen=True, eq=False)
class TemplateShape:
    """Closed planar shape in template coordinates (area centroid at the origin)."""

    name: str
    kind: str
    params: tuple
    offset: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.offset is None:
            raw = self._raw_boundary(4096)
            object.__setattr__(self, "offset", _polygon_centroid(raw))

    def _raw_boundary(self, n: int) -> np.ndarray:
        if self.kind == "leaf":
            half_len, half_width, skew = self.params
            s = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
            x = -half_len * np.cos(s)
            u = x / half_len
            w = half_width * (1.0 - u * u) * (1.0 + skew * u)
            return np.stack([x, np.sign(np.sin(s)) * w], axis=1)
        theta = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
        r = self._radius(theta)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)

    def _radius(self, theta):
        r0, *harmonics = self.params
        r = np.ones_like(theta)
        for k, a, phase in harmonics:
            r = r + a * np.cos(k * theta + phase)
        return r0 * r

    def boundary(self, n: int = 720) -> np.ndarray:
        return self._raw_boundary(n) - self.offset

    def inside(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float) + self.offset
        if self.kind == "leaf":
            half_len, half_width, skew = self.params
            u = np.clip(p[..., 0] / half_len, -1.0, 1.0)
            w = half_width * (1.0 - u * u) * (1.0 + skew * u)
            return (np.abs(p[..., 0]) < half_len) & (np.abs(p[..., 1]) < w)
        r = np.hypot(p[..., 0], p[..., 1])
        return r < self._radius(np.arctan2(p[..., 1], p[..., 0]))


def leaf_shape() -> TemplateShape:
    return TemplateShape("leaf", "leaf", (30.0, 13.0, 0.3))


def trefoil_shape() -> TemplateShape:
    return TemplateShape("trefoil", "polar", (20.0, (3, 0.25, 0.0)))


def kidney_shape() -> TemplateShape:
    return TemplateShape("kidney", "polar", (21.0, (1, 0.15, 0.0), (2, 0.18, 0.5)))


def template_shapes() -> list[TemplateShape]:
    return [leaf_shape(), trefoil_shape(), kidney_shape()]


def render_mask(shape: TemplateShape, pose: AffineMap, width: int, height: int) -> ScalarField2D:
    """Binary silhouette of the shape moved by ``pose``, sampled at pixel centers."""
    z = pixel_grid(width, height).reshape(-1, 2)
    t = apply_affine(invert_affine(pose), z)
    return ScalarField2D(shape.inside(t).reshape(height, width).astype(float))


def render_image(mask: ScalarField2D, fg: float = FOREGROUND, bg: float = BACKGROUND,
                 blur: float = EDGE_BLUR) -> ScalarField2D:
    return ScalarField2D(gaussian_blur(mask.values * (fg - bg) + bg, blur))


def template_pose(width: int, height: int) -> AffineMap:
    """Identity linear part, template origin at the raster center."""
    return AffineMap(np.eye(2), [width / 2.0, height / 2.0])


def interior_centers(shape: TemplateShape, spacing: float = 8.0, margin: float = 4.0) -> np.ndarray:
    """Lattice of points inside the shape at least ``margin`` px from the boundary."""
    bd = shape.boundary(2048)
    lo = np.floor(bd.min(axis=0)) - 2
    hi = np.ceil(bd.max(axis=0)) + 2
    xs = np.arange(lo[0], hi[0] + 1)
    ys = np.arange(lo[1], hi[1] + 1)
    gx, gy = np.meshgrid(xs, ys)
    inside = shape.inside(np.stack([gx, gy], axis=-1))
    dist = ndimage.distance_transform_edt(inside)
    ok = dist >= margin
    cx = np.arange(0.0, hi[0] + 1, spacing)
    cx = np.concatenate([-cx[:0:-1], cx])
    cy = np.arange(0.0, hi[1] + 1, spacing)
    cy = np.concatenate([-cy[:0:-1], cy])
    pts = []
    for y in cy:
        for x in cx:
            if lo[0] <= x <= hi[0] and lo[1] <= y <= hi[1]:
                if ok[int(round(y - lo[1])), int(round(x - lo[0]))]:
                    pts.append((x, y))
    return np.array(pts)


def random_affine(rng: np.random.Generator, det_range=(0.5, 2.0), sv_range=(0.7, 1.45),
                  center=(0.0, 0.0), shift: float = 0.0) -> AffineMap:
    """Rotation-scale-rotation linear part with det in ``det_range``."""
    lo, hi = np.log(sv_range)
    while True:
        s = np.exp(rng.uniform(lo, hi, size=2))
        if det_range[0] <= s[0] * s[1] <= det_range[1]:
            break
    t1, t2 = rng.uniform(0.0, 2.0 * math.pi, size=2)
    a = _rot(t1) @ np.diag(s) @ _rot(t2)
    b = np.asarray(center, dtype=float) + rng.uniform(-shift, shift, size=2)
    return AffineMap(a, b)


def _rot(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


@dataclass
class AffineInstance:
    pose: AffineMap
    image: ScalarField2D
    truth_mask: ScalarField2D
    truth_contour: np.ndarray
    target_points: np.ndarray
    cost: np.ndarray
    correspondences: np.ndarray


def simulate_matches(pose: AffineMap, centers, src_desc, rng: np.random.Generator,
                     width: int, height: int, jitter: float = 3.0, desc_noise: float = 0.3,
                     clutter: int = 3):
    """Stand-in for detected and matched features in a target image.

    Returns (target points, cost matrix, correspondences): the moved centers
    with Gaussian localisation jitter plus ``clutter`` random points, costs from
    perturbed descriptors, and the cheapest target for every center.
    """
    centers = np.asarray(centers, dtype=float)
    tgt = apply_affine(pose, centers) + rng.normal(scale=jitter, size=centers.shape)
    tgt_desc = src_desc + rng.normal(scale=desc_noise, size=src_desc.shape)
    if clutter:
        tgt = np.vstack([tgt, rng.uniform([0, 0], [width - 1, height - 1], size=(clutter, 2))])
        tgt_desc = np.vstack([tgt_desc, rng.normal(size=(clutter, src_desc.shape[1]))])
    cost = build_cost_matrix(src_desc, tgt_desc)
    return tgt, cost, greedy_correspondences(cost)


def template_descriptors(n: int, rng: np.random.Generator, dim: int = 16) -> np.ndarray:
    return rng.normal(size=(n, dim))


def synth_affine_suite(shape: TemplateShape, centers, count: int, det_range=(0.5, 2.0), seed: int = 0,
                       width: int = 128, height: int = 128, jitter: float = 3.0, clutter: int = 3,
                       shift: float = 6.0, force_identity: bool = False) -> list[AffineInstance]:
    """Images of the template under random affine poses with simulated feature matches."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    src_desc = template_descriptors(len(centers), rng)
    center = (width / 2.0, height / 2.0)
    out = []
    for k in range(count):
        if force_identity and k == 0:
            pose = template_pose(width, height)
        else:
            pose = random_affine(rng, det_range, center=center, shift=shift)
        mask = render_mask(shape, pose, width, height)
        tgt, cost, corr = simulate_matches(pose, centers, src_desc, rng, width, height,
                                           jitter=jitter, clutter=clutter)
        out.append(AffineInstance(pose, render_image(mask), mask,
                                  apply_affine(pose, shape.boundary()), tgt, cost, corr))
    return out


def add_noise(image: ScalarField2D, sigma: float, rng: np.random.Generator,
              clip=(0.0, 255.0)) -> ScalarField2D:
    noisy = image.values + rng.normal(scale=sigma, size=image.values.shape) if sigma > 0 \
        else image.values.copy()
    return ScalarField2D(np.clip(noisy, *clip))


def synth_noise_suite(base: ScalarField2D, sigmas=tuple(range(1, 21)), per_level: int = 30,
                      seed: int = 0) -> list[tuple[float, ScalarField2D]]:
    """Additive zero-mean Gaussian noise, clipped to [0, 255]."""
    if len(sigmas) == 0:
        raise ValueError("sigmas must be non-empty")
    rng = np.random.default_rng(seed)
    return [(float(s), add_noise(base, s, rng)) for s in sigmas for _ in range(per_level)]


# Feature matching degrades with image noise; these rates set how fast.
NOISE_JITTER_RATE = 0.25     # extra px of localisation error per unit noise sigma
NOISE_DESCRIPTOR_RATE = 0.05  # extra descriptor noise per unit noise sigma


def noisy_match_params(sigma: float, jitter: float = 3.0, desc_noise: float = 0.3) -> dict:
    return {"jitter": jitter + NOISE_JITTER_RATE * sigma,
            "desc_noise": desc_noise + NOISE_DESCRIPTOR_RATE * sigma}
