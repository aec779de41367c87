"""Affine-posed shape decision functions.

A posed shape moves the template kernel centers by ``q_i = A p_i + b``.  The
affine-invariant form measures distance in the template frame,

    phi_S(z) = sum_i alpha_i * exp(-|A^{-1} z - p_i - A^{-1} b|^2 / sigma^2) + beta,

so its zero set is exactly the template zero set mapped by ``(A, b)``.  The
non-invariant form only moves the centers and keeps the Euclidean metric of the
target frame.

Derivatives are taken with ``(A^{-1}, b)`` as the independent parameters.  With
``v_i = A^{-1}(z - b) - p_i`` and ``w_i = alpha_i exp(-|v_i|^2 / sigma^2)``:

    d phi_S / d A^{-1} = -(2 / sigma^2) sum_i w_i v_i (z - b)^T
    d phi_S / d b      = +(2 / sigma^2) sum_i w_i A^{-T} v_i
    grad_z phi_S       = -(2 / sigma^2) sum_i w_i A^{-T} v_i

The commonly printed closed forms use ``z^T`` in place of ``(z - b)^T`` and a
leading minus on the ``b`` derivative; those are available through
``as_printed=True`` for comparison, and agree with finite differences only when
``b = 0`` (and, for the ``b`` derivative, never in sign).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contour import ContourPolyline, extract_contour
from .core import AffineMap, ScalarField2D, apply_affine, as_points, invert_affine, pixel_grid
from .shape_model import RbfShapeModel


@dataclass(frozen=True, eq=False)
class PosedShape:
    model: RbfShapeModel
    pose: AffineMap

    def __post_init__(self):
        # Fails early with SingularMap for a non-invertible pose.
        object.__setattr__(self, "_a_inv", invert_affine(self.pose).a)

    @property
    def a_inv(self) -> np.ndarray:
        return self._a_inv

    @classmethod
    def from_inverse(cls, model: RbfShapeModel, a_inv, b) -> PosedShape:
        """Build from the optimisation chart ``(A^{-1}, b)``."""
        return cls(model, AffineMap(np.linalg.inv(np.asarray(a_inv, dtype=float)), b))


def _terms(s: PosedShape, z):
    """Per-kernel (v_i, w_i) with the kernel index on axis -2 / -1."""
    z = as_points(z)
    m = s.model
    u = (z - s.pose.b) @ s.a_inv.T
    v = u[..., None, :] - m.centers
    w = m.weights * np.exp(-np.einsum("...k,...k->...", v, v) / m.sigma ** 2)
    return z, v, w


def eval_phi_s(s: PosedShape, z):
    z, _, w = _terms(s, z)
    out = w.sum(axis=-1) + s.model.bias
    return float(out) if z.ndim == 1 else out


def eval_phi_noninvariant(s: PosedShape, z):
    """Decision function with moved centers and the target-frame metric."""
    z = as_points(z)
    m = s.model
    q = apply_affine(s.pose, m.centers)
    d = z[..., None, :] - q
    out = np.exp(-np.einsum("...k,...k->...", d, d) / m.sigma ** 2) @ m.weights + m.bias
    return float(out) if z.ndim == 1 else out


def grad_z_phi_s(s: PosedShape, z) -> np.ndarray:
    """Exact spatial gradient of phi_S, shape (..., 2)."""
    _, v, w = _terms(s, z)
    g = -(2.0 / s.model.sigma ** 2) * np.einsum("...i,...ik->...k", w, v)
    return g @ s.a_inv


def d_phi_s_d_ainv(s: PosedShape, z, as_printed: bool = False) -> np.ndarray:
    """Derivative of phi_S with respect to the entries of A^{-1}; shape (..., 2, 2)."""
    z, v, w = _terms(s, z)
    r = z if as_printed else z - s.pose.b
    wv = np.einsum("...i,...ik->...k", w, v)
    return -(2.0 / s.model.sigma ** 2) * wv[..., :, None] * r[..., None, :]


def d_phi_s_d_b(s: PosedShape, z, as_printed: bool = False) -> np.ndarray:
    """Derivative of phi_S with respect to b; shape (..., 2)."""
    _, v, w = _terms(s, z)
    g = (2.0 / s.model.sigma ** 2) * np.einsum("...i,...ik->...k", w, v) @ s.a_inv
    return -g if as_printed else g


def rasterize(s: PosedShape, width: int, height: int) -> ScalarField2D:
    z = pixel_grid(width, height).reshape(-1, 2)
    return ScalarField2D(eval_phi_s(s, z).reshape(height, width))


def rasterize_noninvariant(s: PosedShape, width: int, height: int) -> ScalarField2D:
    z = pixel_grid(width, height).reshape(-1, 2)
    return ScalarField2D(eval_phi_noninvariant(s, z).reshape(height, width))


def implicit_contour(s: PosedShape, width: int, height: int,
                     invariant: bool = True) -> list[ContourPolyline]:
    f = rasterize(s, width, height) if invariant else rasterize_noninvariant(s, width, height)
    return extract_contour(f)


def snap_to_zero_set(s: PosedShape, pts, iters: int = 20) -> np.ndarray:
    """Newton steps along grad phi_S that move points onto the zero set."""
    z = np.array(as_points(pts), dtype=float)
    for _ in range(iters):
        g = grad_z_phi_s(s, z)
        z = z - (eval_phi_s(s, z) / np.maximum(np.sum(g * g, axis=-1), 1e-300))[..., None] * g
    return z


def invariance_residual(s: PosedShape, reference_contour, invariant: bool = True) -> float:
    """max |phi(A z_c + b)| over the vertices z_c of a contour taken at identity pose."""
    pts = reference_contour.points if isinstance(reference_contour, ContourPolyline) \
        else np.asarray(reference_contour, dtype=float)
    moved = apply_affine(s.pose, pts)
    vals = eval_phi_s(s, moved) if invariant else eval_phi_noninvariant(s, moved)
    return float(np.max(np.abs(vals)))
