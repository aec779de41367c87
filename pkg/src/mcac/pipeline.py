"""End-to-end segmentation: points-to-shape alignment, then constrained contour refinement."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .active_contour import edge_indicator
from .affine_shape import PosedShape, rasterize
from .contour import ContourPolyline, extract_contour
from .core import AffineMap, ScalarField2D, read_pgm, read_raw_array
from .errors import ConfigError, EmptyContour, InfeasibleStart
from .matching import (AlignConfig, MatchProblem, default_epsilon, initial_alignment,
                       read_correspondences_csv, read_points_csv, refine_alignment)
from .metrics import jaccard, normalized_hausdorff
from .optimizer import McacContext, McacState, OptimizerConfig, default_tau, run_mcac
from .shape_model import RbfShapeModel, load_model

log = logging.getLogger(__name__)


@dataclass
class SegmentSettings:
    sigma_g: float = 1.5
    epsilon: float | None = None
    tau_ratio: float = 0.9
    step_A: float = 0.02
    step_b: float = 1.0
    max_iters: int = 200
    param_change_tol: float = 1e-4
    align: AlignConfig = field(default_factory=AlignConfig)


@dataclass
class PipelineConfig:
    image: Path
    model: Path
    target_points: Path
    correspondences: Path
    cost: Path | None = None
    truth: Path | None = None
    settings: SegmentSettings = field(default_factory=SegmentSettings)
    seed: int = 0

    def validate(self):
        for name in ("image", "model", "target_points", "correspondences", "cost", "truth"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{name} file not found: {p}")


@dataclass
class SegmentationResult:
    initial_pose: AffineMap
    final_pose: AffineMap
    initial_contours: list[ContourPolyline]
    final_contours: list[ContourPolyline]
    initial_mask: np.ndarray
    final_mask: np.ndarray
    trajectory: list[McacState]
    initial_jaccard: float | None = None
    final_jaccard: float | None = None


def region_mask(model: RbfShapeModel, pose: AffineMap, width: int, height: int) -> np.ndarray:
    return rasterize(PosedShape(model, pose), width, height).values > 0


def contours_or_empty(model, pose, width, height) -> list[ContourPolyline]:
    try:
        return extract_contour(rasterize(PosedShape(model, pose), width, height))
    except EmptyContour:
        return []


def segment_arrays(model: RbfShapeModel, image: ScalarField2D, target_points, correspondences,
                   cost=None, truth=None, settings: SegmentSettings | None = None) -> SegmentationResult:
    """Align the model to matched points, then refine the pose against image edges."""
    st = settings or SegmentSettings()
    target_points = np.asarray(target_points, dtype=float).reshape(-1, 2)
    if cost is None:
        cost = np.zeros((model.n, len(target_points)))
    eps = st.epsilon if st.epsilon is not None else default_epsilon(target_points)
    problem = MatchProblem(model.centers, target_points, cost, eps)

    pose0 = initial_alignment(model.centers, target_points, correspondences)
    pose0 = refine_alignment(problem, pose0, st.align)

    w, h = image.width, image.height
    ctx = McacContext(model, problem, edge_indicator(image, st.sigma_g), w, h)
    e0 = ctx.E(pose0)
    tau, band = default_tau(e0, st.tau_ratio)
    cfg = OptimizerConfig(tau=tau, step_A=st.step_A, step_b=st.step_b, max_iters=st.max_iters,
                          param_change_tol=st.param_change_tol, tau_band=band)
    try:
        start = ctx.state(pose0)
    except EmptyContour as exc:
        raise EmptyContour("aligned shape has no contour inside the image") from exc
    try:
        traj = run_mcac(start, ctx, cfg)
    except InfeasibleStart as exc:
        raise InfeasibleStart(f"{exc} (tau ratio {st.tau_ratio})") from exc
    final = traj[-1].pose

    res = SegmentationResult(pose0, final, ctx.contours(pose0)[2], ctx.contours(final)[2],
                             region_mask(model, pose0, w, h), region_mask(model, final, w, h), traj)
    if truth is not None:
        res.initial_jaccard = jaccard(res.initial_mask, truth)
        res.final_jaccard = jaccard(res.final_mask, truth)
    return res


def segment(cfg: PipelineConfig) -> SegmentationResult:
    cfg.validate()
    model = load_model(cfg.model)
    image = read_pgm(cfg.image)
    tgt = read_points_csv(cfg.target_points)
    corr = read_correspondences_csv(cfg.correspondences)
    cost = read_raw_array(cfg.cost) if cfg.cost is not None else None
    truth = read_pgm(cfg.truth) if cfg.truth is not None else None
    return segment_arrays(model, image, tgt, corr, cost, truth, cfg.settings)


def contour_nhd(contours, truth_contour) -> float:
    if not contours:
        return 1.0
    return normalized_hausdorff(contours, truth_contour)
