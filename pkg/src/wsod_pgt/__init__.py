"""Pseudo-ground-truth mining, refinement and VOC-2007 evaluation tooling
for two-phase weakly supervised object detection."""

from wsod_pgt.geometry import BBox, area, iou
from wsod_pgt.voc_io import Detection, ImageAnnotation, ImageLevelLabels

__all__ = [
    "BBox",
    "Detection",
    "ImageAnnotation",
    "ImageLevelLabels",
    "area",
    "iou",
]

__version__ = "0.1.0"
