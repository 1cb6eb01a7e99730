"""VOC-2007 detection evaluation.

Matching is the classic greedy VOC rule: detections are visited by
descending score (stable on input order), each one looks up the ground-truth
box of maximal IoU (lowest index on ties). It is a true positive when that
IoU reaches the threshold and the box is still unclaimed; otherwise it is a
false positive, which is how duplicates of an already-found object are
punished. AP is the 11-point interpolated precision with ``recall >= r``.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

from wsod_pgt.geometry import BBox, iou
from wsod_pgt.voc_io import DataError, Detection, ImageAnnotation

RECALL_LEVELS = tuple(i / 10 for i in range(11))


class ContractError(ValueError):
    """Inputs violate an operation's precondition."""


@dataclass(frozen=True)
class MatchResult:
    is_tp: tuple[bool, ...]
    """One flag per detection, in the order the detections were given."""
    n_gt: int
    iou_threshold: float

    @property
    def tp(self) -> int:
        return sum(self.is_tp)

    @property
    def fp(self) -> int:
        return len(self.is_tp) - self.tp

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp


@dataclass(frozen=True)
class PRCurve:
    recall: tuple[float, ...]
    precision: tuple[float, ...]
    scores: tuple[float, ...]
    n_pos: int
    hits: tuple[bool, ...] = ()

    @property
    def tp(self) -> int:
        return sum(self.hits)

    @property
    def fp(self) -> int:
        return len(self.hits) - self.tp

    @property
    def fn(self) -> int:
        return self.n_pos - self.tp

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall, self.precision))

    @property
    def excluded(self) -> bool:
        """True when the class has no ground truth and must not enter mAP."""
        return self.n_pos == 0


@dataclass(frozen=True)
class EvalReport:
    ap: dict[str, float]
    curves: dict[str, PRCurve]

    @property
    def mean_ap(self) -> float:
        if not self.ap:
            return 0.0
        return sum(self.ap[c] for c in sorted(self.ap)) / len(self.ap)

    def to_csv(self) -> str:
        rows = ["class,ap"]
        rows += [f"{c},{self.ap[c]:.6f}" for c in sorted(self.ap)]
        rows.append(f"mAP,{self.mean_ap:.6f}")
        return "\n".join(rows) + "\n"

    def curves_csv(self) -> str:
        rows = ["class,rank,score,recall,precision"]
        for c in sorted(self.ap):
            cv = self.curves[c]
            for rank, (s, r, p) in enumerate(zip(cv.scores, cv.recall, cv.precision), 1):
                rows.append(f"{c},{rank},{s:.6f},{r:.6f},{p:.6f}")
        return "\n".join(rows) + "\n"


def _ranked(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match_class_in_image(
    dets: Sequence[Detection], gts: Sequence[BBox], iou_threshold: float = 0.5
) -> MatchResult:
    if not 0.0 < iou_threshold < 1.0:
        raise ContractError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    if len({(d.image_id, d.class_name) for d in dets}) > 1:
        raise ContractError("detections span more than one (image, class)")

    claimed = [False] * len(gts)
    is_tp = [False] * len(dets)
    for i in _ranked(dets):
        best, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            o = iou(dets[i].bbox, g)
            if o > best_iou:
                best, best_iou = j, o
        if best >= 0 and best_iou >= iou_threshold and not claimed[best]:
            claimed[best] = True
            is_tp[i] = True
    return MatchResult(tuple(is_tp), len(gts), iou_threshold)


def precision_recall(m: MatchResult) -> tuple[float, float]:
    tp, fp, fn = m.tp, m.fp, m.fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def pr_curve(
    dets: Sequence[Detection],
    gts: Mapping[str, Sequence[BBox]],
    iou_threshold: float = 0.5,
) -> PRCurve:
    """Cumulative precision/recall over ``dets`` (one class, any images)
    ranked by descending score."""
    by_image: dict[str, list[int]] = defaultdict(list)
    for i, d in enumerate(dets):
        by_image[d.image_id].append(i)

    flags = [False] * len(dets)
    for image_id, idx in by_image.items():
        m = match_class_in_image([dets[i] for i in idx], gts.get(image_id, ()), iou_threshold)
        for i, hit in zip(idx, m.is_tp):
            flags[i] = hit

    n_pos = sum(len(v) for v in gts.values())
    if n_pos == 0:
        return PRCurve((), (), (), 0)
    recall, precision, scores = [], [], []
    ranked = _ranked(dets)
    tp = fp = 0
    for i in ranked:
        if flags[i]:
            tp += 1
        else:
            fp += 1
        recall.append(tp / n_pos)
        precision.append(tp / (tp + fp))
        scores.append(dets[i].score)
    hits = tuple(flags[i] for i in ranked)
    return PRCurve(tuple(recall), tuple(precision), tuple(scores), n_pos, hits)


def ap_11point(c: PRCurve) -> float:
    total = 0.0
    for level in RECALL_LEVELS:
        total += max((p for r, p in zip(c.recall, c.precision) if r >= level), default=0.0)
    return total / 11


def evaluate(
    dets: Sequence[Detection],
    gt: Sequence[ImageAnnotation],
    iou_threshold: float = 0.5,
) -> EvalReport:
    """Per-class 11-point AP over all classes that have ground truth.

    Detections of classes absent from the ground truth are ignored.
    """
    known = {a.image_id for a in gt}
    for d in dets:
        if d.image_id not in known:
            raise DataError(f"detection refers to unknown image id {d.image_id!r}")

    boxes: dict[str, dict[str, list[BBox]]] = defaultdict(lambda: defaultdict(list))
    for a in gt:
        for o in a.objects:
            boxes[o.class_name][a.image_id].append(o.bbox)
    per_class: dict[str, list[Detection]] = defaultdict(list)
    for d in dets:
        per_class[d.class_name].append(d)

    ap, curves = {}, {}
    for cls in sorted(boxes):
        curve = pr_curve(per_class.get(cls, []), boxes[cls], iou_threshold)
        curves[cls] = curve
        ap[cls] = ap_11point(curve)
    return EvalReport(ap, curves)
