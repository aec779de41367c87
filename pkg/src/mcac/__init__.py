"""Affine-invariant shape priors for active contour segmentation.

A trained radial-basis shape model is aligned to matched feature points and
then refined against image edges while the matching energy stays bounded.
"""
from .core import AffineMap, ScalarField2D
from .errors import McacError
from .pipeline import PipelineConfig, SegmentationResult, SegmentSettings, segment, segment_arrays
from .shape_model import RbfShapeModel, load_model, save_model

__all__ = ["AffineMap", "ScalarField2D", "McacError", "PipelineConfig", "SegmentationResult",
           "SegmentSettings", "segment", "segment_arrays", "RbfShapeModel", "load_model", "save_model"]
__version__ = "0.1.0"
