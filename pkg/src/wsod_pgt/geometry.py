"""Axis-aligned box arithmetic.

Boxes use continuous geometry: width is ``xmax - xmin`` with no inclusive
``+1`` pixel correction, so integer VOC boxes and fractional detector boxes
share one code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class InvalidBoxError(ValueError):
    """Raised when a box is degenerate or has non-finite coordinates."""


@dataclass(frozen=True)
class BBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        coords = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBoxError(f"non-finite box coordinates {coords}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise InvalidBoxError(f"degenerate box {coords}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    def shifted(self, dx: float, dy: float) -> BBox:
        return BBox(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)


def area(b: BBox) -> float:
    return (b.xmax - b.xmin) * (b.ymax - b.ymin)


def intersection(a: BBox, b: BBox) -> float:
    iw = max(0.0, min(a.xmax, b.xmax) - max(a.xmin, b.xmin))
    ih = max(0.0, min(a.ymax, b.ymax) - max(a.ymin, b.ymin))
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union, 0.0 for disjoint boxes and exactly 1.0 for
    equal ones."""
    if a == b:
        return 1.0
    inter = intersection(a, b)
    if inter <= 0.0:
        return 0.0
    union = area(a) + area(b) - inter
    return min(1.0, inter / union)
