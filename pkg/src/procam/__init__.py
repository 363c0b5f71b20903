"""Detection of moving shadows and light spots on projection screens.

The camera image is compared against an image estimated from the
projector's frame buffer through per-region colour transfer functions;
differences that survive denoising and shape rules are reported as spots.
"""
from .detection import DetectionReport, Spot, SpotFilterConfig, ThresholdTriple, detect_frame
from .geometry import CorrespondenceTable, HomographyParams, build_correspondence_table, estimate_homography
from .imaging import GridDims
from .lut import ColorLut, build_lut, estimate_image_lut
from .photometry import CalibrationModel, SamplePlan, VerhulstParams, calibrate, estimate_image, fit_verhulst

__version__ = "0.1.0"

__all__ = [
    "CalibrationModel",
    "ColorLut",
    "CorrespondenceTable",
    "DetectionReport",
    "GridDims",
    "HomographyParams",
    "SamplePlan",
    "Spot",
    "SpotFilterConfig",
    "ThresholdTriple",
    "VerhulstParams",
    "build_correspondence_table",
    "build_lut",
    "calibrate",
    "detect_frame",
    "estimate_homography",
    "estimate_image",
    "estimate_image_lut",
    "fit_verhulst",
]
