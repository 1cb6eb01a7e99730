"""Top-k pseudo-ground-truth mining from ranked detections.

For every image and every class named in its image-level labels, the
detections of that class are ranked by score and the best ``k`` become PGT
boxes. Classes that are detected but not labelled never reach the PGT.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

from wsod_pgt.geometry import BBox
from wsod_pgt.voc_io import (
    AnnotatedObject,
    DataError,
    Detection,
    ImageAnnotation,
    ImageLevelLabels,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MiningConfig:
    k: int = 1

    def __post_init__(self) -> None:
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")


@dataclass(frozen=True)
class ScoredPGTEntry:
    """A PGT box together with the detector score that put it there."""

    class_name: str
    bbox: BBox
    score: float

    @classmethod
    def from_detection(cls, d: Detection) -> ScoredPGTEntry:
        return cls(d.class_name, d.bbox, d.score)

    def to_detection(self, image_id: str) -> Detection:
        return Detection(image_id, self.class_name, self.score, self.bbox)


@dataclass(frozen=True)
class MiningWarning:
    image_id: str
    class_name: str

    def __str__(self) -> str:
        return f"{self.image_id}: labelled class {self.class_name!r} has no detections"


def rank_by_score(dets: Sequence[Detection]) -> list[Detection]:
    """Descending score; equal scores keep input order."""
    return sorted(dets, key=lambda d: -d.score)


def top_k_entries(
    dets: Sequence[Detection],
    labels: ImageLevelLabels,
    k: int,
    warnings: list[MiningWarning] | None = None,
) -> dict[str, list[ScoredPGTEntry]]:
    """Per labelled class, the top-``k`` detections of one image."""
    by_class: dict[str, list[Detection]] = defaultdict(list)
    for d in dets:
        if d.image_id != labels.image_id:
            raise DataError(
                f"detection for image {d.image_id!r} passed with labels of {labels.image_id!r}"
            )
        by_class[d.class_name].append(d)

    out = {}
    for cls in sorted(labels.classes):
        ranked = rank_by_score(by_class.get(cls, []))
        if not ranked:
            w = MiningWarning(labels.image_id, cls)
            logger.warning("%s", w)
            if warnings is not None:
                warnings.append(w)
        out[cls] = [ScoredPGTEntry.from_detection(d) for d in ranked[:k]]
    return out


def entries_to_annotation(
    image_id: str,
    entries: Mapping[str, Sequence[ScoredPGTEntry]],
    size: tuple[int, int] | None = None,
) -> ImageAnnotation:
    """Flatten per-class entries (class name order, then list order).

    Without an explicit ``size`` the image is assumed to just cover every box.
    """
    objects = [
        AnnotatedObject(e.class_name, e.bbox)
        for cls in sorted(entries)
        for e in entries[cls]
    ]
    if size is None:
        w = max((math.ceil(o.bbox.xmax) for o in objects), default=1)
        h = max((math.ceil(o.bbox.ymax) for o in objects), default=1)
        size = (max(w, 1), max(h, 1))
    return ImageAnnotation(image_id, size[0], size[1], tuple(objects))


def mine_image(
    dets: Sequence[Detection],
    labels: ImageLevelLabels,
    cfg: MiningConfig,
    size: tuple[int, int] | None = None,
    warnings: list[MiningWarning] | None = None,
) -> ImageAnnotation:
    entries = top_k_entries(dets, labels, cfg.k, warnings)
    return entries_to_annotation(labels.image_id, entries, size)


def group_by_image(
    dets: Sequence[Detection], image_ids: Sequence[str]
) -> dict[str, list[Detection]]:
    grouped: dict[str, list[Detection]] = {i: [] for i in image_ids}
    for d in dets:
        if d.image_id not in grouped:
            raise DataError(f"detection refers to unknown image id {d.image_id!r}")
        grouped[d.image_id].append(d)
    return grouped


def mine_dataset_entries(
    dets: Sequence[Detection],
    labels: Sequence[ImageLevelLabels],
    cfg: MiningConfig,
    warnings: list[MiningWarning] | None = None,
) -> dict[str, dict[str, list[ScoredPGTEntry]]]:
    grouped = group_by_image(dets, [lab.image_id for lab in labels])
    by_id = {lab.image_id: lab for lab in labels}
    return {
        image_id: top_k_entries(grouped[image_id], by_id[image_id], cfg.k, warnings)
        for image_id in sorted(by_id)
    }


def mine_dataset(
    dets: Sequence[Detection],
    labels: Sequence[ImageLevelLabels],
    cfg: MiningConfig,
    sizes: Mapping[str, tuple[int, int]] | None = None,
    warnings: list[MiningWarning] | None = None,
) -> list[ImageAnnotation]:
    """Mine every labelled image; output is sorted by image id and has one
    annotation per labelled image, possibly with no objects."""
    entries = mine_dataset_entries(dets, labels, cfg, warnings)
    sizes = sizes or {}
    return [
        entries_to_annotation(image_id, per_class, sizes.get(image_id))
        for image_id, per_class in entries.items()
    ]
