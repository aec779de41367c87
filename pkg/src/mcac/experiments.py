"""Seeded synthetic experiments shared by the CLI and the acceptance suite."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .affine_shape import PosedShape, rasterize, rasterize_noninvariant
from .contour import extract_contour
from .core import apply_affine
from .errors import EmptyContour
from .pipeline import SegmentSettings, contour_nhd, segment_arrays
from .shape_model import (HeavisideParams, RbfShapeModel, TrainConfig, fit_score, mask_centers,
                          select_sigma, train)
from .synth import (TemplateShape, add_noise, noisy_match_params, random_affine, render_image,
                    render_mask, simulate_matches, synth_affine_suite, template_descriptors,
                    template_pose)

RASTER = 128
BATCH_HEADER = ["instance", "initial_jaccard", "final_jaccard", "nhd_initial", "nhd_final"]
INVARIANCE_HEADER = ["trial", "nhd_invariant", "nhd_noninvariant"]
NOISE_HEADER = ["sigma", "image", "initial_jaccard", "final_jaccard"]


@dataclass
class TrainedTemplate:
    shape: TemplateShape
    model: RbfShapeModel
    mask: object
    fit_score: float
    history: list


def train_template(shape: TemplateShape, spacing: float = 6.0, margin: float = 2.0,
                   sigma: float | None = None, width: int = RASTER, height: int = RASTER,
                   h: HeavisideParams = HeavisideParams()) -> TrainedTemplate:
    """Render the shape at the raster center, place centers, pick sigma and train."""
    origin = (width / 2.0, height / 2.0)
    mask = render_mask(shape, template_pose(width, height), width, height)
    centers = mask_centers(mask, spacing, margin, origin=origin)
    if sigma is None:
        sigma = select_sigma(mask, centers, h, origin=origin)
    history: list[float] = []
    model = train(RbfShapeModel.initial(centers, sigma), mask, h, TrainConfig(history=history), origin)
    return TrainedTemplate(shape, model, mask, fit_score(model, mask, h, origin), history)


def _contours(field):
    try:
        return extract_contour(field)
    except EmptyContour:
        return []


def invariance_trials(model: RbfShapeModel, shape: TemplateShape, trials: int, seed: int,
                      det_range=(0.5, 2.0), width: int = RASTER, height: int = RASTER,
                      shift: float = 6.0) -> list[tuple]:
    """Per trial, NHD of the invariant and non-invariant zero sets against the moved true boundary."""
    rng = np.random.default_rng(seed)
    truth = shape.boundary()
    rows = []
    for k in range(trials):
        pose = random_affine(rng, det_range, center=(width / 2.0, height / 2.0), shift=shift)
        s = PosedShape(model, pose)
        gt = apply_affine(pose, truth)
        inv = contour_nhd(_contours(rasterize(s, width, height)), gt)
        non = contour_nhd(_contours(rasterize_noninvariant(s, width, height)), gt)
        rows.append((k, inv, non))
    return rows


def segmentation_batch(model: RbfShapeModel, shape: TemplateShape, count: int, seed: int,
                       det_range=(0.5, 2.0), settings: SegmentSettings | None = None) -> list[tuple]:
    rows = []
    for k, inst in enumerate(synth_affine_suite(shape, model.centers, count, det_range, seed)):
        res = segment_arrays(model, inst.image, inst.target_points, inst.correspondences,
                             inst.cost, inst.truth_mask, settings)
        rows.append((k, res.initial_jaccard, res.final_jaccard,
                     contour_nhd(res.initial_contours, inst.truth_contour),
                     contour_nhd(res.final_contours, inst.truth_contour)))
    return rows


def noise_trend(model: RbfShapeModel, shape: TemplateShape, sigmas, per_level: int, seed: int,
                settings: SegmentSettings | None = None) -> list[tuple]:
    """Segment noisy copies of one synthetic instance.

    Both the image and the simulated feature matches degrade with the noise
    level; see :func:`mcac.synth.noisy_match_params`.
    """
    rng = np.random.default_rng(seed)
    desc = template_descriptors(model.n, rng)
    pose = random_affine(rng, center=(RASTER / 2.0, RASTER / 2.0), shift=6.0)
    truth = render_mask(shape, pose, RASTER, RASTER)
    base = render_image(truth)
    rows = []
    for sigma in sigmas:
        for k in range(per_level):
            image = add_noise(base, sigma, rng)
            tgt, cost, corr = simulate_matches(pose, model.centers, desc, rng, RASTER, RASTER,
                                               **noisy_match_params(sigma))
            res = segment_arrays(model, image, tgt, corr, cost, truth, settings)
            rows.append((float(sigma), k, res.initial_jaccard, res.final_jaccard))
    return rows


def write_rows(path, header, rows) -> None:
    """CSV with floats written by repr, so equal results give identical bytes."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
