"""Region and boundary agreement measures."""
from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.spatial.distance import pdist

from .contour import ContourPolyline, all_vertices
from .core import ScalarField2D
from .errors import DimensionMismatch, EmptyContour


def _mask(m) -> np.ndarray:
    v = m.values if isinstance(m, ScalarField2D) else np.asarray(m)
    return v > 0.5


def jaccard(mask_a, mask_b) -> float:
    a, b = _mask(mask_a), _mask(mask_b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def hausdorff(a, b) -> float:
    pa, pb = _points(a), _points(b)
    d_ab = cKDTree(pb).query(pa)[0].max()
    d_ba = cKDTree(pa).query(pb)[0].max()
    return float(max(d_ab, d_ba))


def _points(c) -> np.ndarray:
    if isinstance(c, (np.ndarray, ContourPolyline)):
        pts = np.asarray(getattr(c, "points", c), dtype=float).reshape(-1, 2)
    else:
        c = list(c)
        pts = all_vertices(c) if c else np.empty((0, 2))
    if len(pts) == 0:
        raise EmptyContour("point set is empty")
    return pts


def normalized_hausdorff(a, b) -> float:
    """Hausdorff distance over the diameter of the union of both vertex sets."""
    pa, pb = _points(a), _points(b)
    union = np.concatenate([pa, pb])
    if len(union) > 16:
        # The diameter is attained on the convex hull.
        try:
            union = union[ConvexHull(union).vertices]
        except QhullError:
            pass
    diam = pdist(union).max() if len(union) > 1 else 0.0
    if diam == 0:
        return 0.0
    return hausdorff(pa, pb) / float(diam)
