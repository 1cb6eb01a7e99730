"""Scheduled PGT refinement during second-phase training.

A policy pairs a timing rule (when to refine) with an update rule (which of
the current PGT boxes are swapped for fresh detector output). The detector
is never rebuilt between refinements, so whatever state it carries keeps
evolving across the epoch loop.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

from wsod_pgt.evaluation import EvalReport, evaluate
from wsod_pgt.mining import (
    MiningConfig,
    ScoredPGTEntry,
    entries_to_annotation,
    group_by_image,
    mine_dataset_entries,
    rank_by_score,
)
from wsod_pgt.oracle import DetectorOracle
from wsod_pgt.voc_io import Detection, ImageAnnotation, ImageLevelLabels, image_level_labels

logger = logging.getLogger(__name__)

PGT = dict[str, dict[str, list[ScoredPGTEntry]]]


class TimingRule(enum.Enum):
    EVERY_EPOCH = "every"
    EVERY_THIRD = "third"
    LAST_THREE = "last3"
    ONCE_AT_TWO_THIRDS = "once23"


class UpdateRule(enum.Enum):
    ALL = "all"
    BEST_HALF = "best-half"
    WORST_HALF = "worst-half"


@dataclass(frozen=True)
class RefinementPolicy:
    timing: TimingRule = TimingRule.EVERY_EPOCH
    update: UpdateRule = UpdateRule.ALL
    k: int = 1

    def __post_init__(self) -> None:
        MiningConfig(self.k)
        if self.update is not UpdateRule.ALL and self.k < 2:
            logger.warning("update rule %s with k=%d never replaces anything",
                           self.update.value, self.k)


class ScheduleError(ValueError):
    pass


def two_thirds_epoch(max_epochs: int) -> int:
    q = Decimal(2 * max_epochs) / Decimal(3)
    return int(q.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def should_refine(epoch: int, max_epochs: int, t: TimingRule) -> bool:
    if not 1 <= epoch <= max_epochs:
        raise ScheduleError(f"epoch {epoch} outside 1..{max_epochs}")
    if t in (TimingRule.EVERY_THIRD, TimingRule.LAST_THREE) and max_epochs < 3:
        raise ScheduleError(f"{t.value} needs max_epochs >= 3, got {max_epochs}")
    if t is TimingRule.EVERY_EPOCH:
        return True
    if t is TimingRule.EVERY_THIRD:
        return epoch % 3 == 0
    if t is TimingRule.LAST_THREE:
        return epoch > max_epochs - 3
    return epoch == two_thirds_epoch(max_epochs)


def _take_matching(pool: list[Detection], entry: ScoredPGTEntry) -> None:
    for exact in (True, False):
        for i, d in enumerate(pool):
            if d.bbox == entry.bbox and (not exact or d.score == entry.score):
                del pool[i]
                return


def replaced_slots(current: Sequence[ScoredPGTEntry], u: UpdateRule) -> list[int]:
    """Indices into ``current`` that a half rule swaps out, best-ranked first."""
    order = sorted(range(len(current)), key=lambda i: -current[i].score)
    half = len(current) // 2
    if u is UpdateRule.BEST_HALF:
        return order[:half]
    if u is UpdateRule.WORST_HALF:
        return order[len(order) - half:]
    return order


def refine_image_class(
    current: Sequence[ScoredPGTEntry],
    fresh: Sequence[Detection],
    u: UpdateRule,
    k: int,
) -> list[ScoredPGTEntry]:
    ranked = rank_by_score(fresh)
    if u is UpdateRule.ALL:
        return [ScoredPGTEntry.from_detection(d) for d in ranked[:k]]

    slots = replaced_slots(current, u)
    slot_set = set(slots)
    pool = list(ranked)
    # A fresh box identical to one we keep would be a duplicate PGT object.
    for i, e in enumerate(current):
        if i not in slot_set:
            _take_matching(pool, e)

    result = list(current)
    for slot, d in zip(slots, pool):
        result[slot] = ScoredPGTEntry.from_detection(d)
    return sorted(result, key=lambda e: -e.score)


def refine_dataset(
    pgt: Mapping[str, Mapping[str, Sequence[ScoredPGTEntry]]],
    fresh: Sequence[Detection],
    labels: Sequence[ImageLevelLabels],
    policy: RefinementPolicy,
) -> PGT:
    grouped = group_by_image(fresh, [lab.image_id for lab in labels])
    out: PGT = {}
    for lab in sorted(labels, key=lambda lab: lab.image_id):
        per_class: dict[str, list[Detection]] = {c: [] for c in lab.classes}
        for d in grouped[lab.image_id]:
            if d.class_name in per_class:
                per_class[d.class_name].append(d)
        current = pgt.get(lab.image_id, {})
        out[lab.image_id] = {
            cls: refine_image_class(current.get(cls, []), per_class[cls], policy.update, policy.k)
            for cls in sorted(lab.classes)
        }
    return out


def pgt_detections(pgt: Mapping[str, Mapping[str, Sequence[ScoredPGTEntry]]]) -> list[Detection]:
    """PGT boxes as scored detections, for evaluating PGT against GT."""
    return [
        e.to_detection(image_id)
        for image_id in sorted(pgt)
        for cls in sorted(pgt[image_id])
        for e in pgt[image_id][cls]
    ]


def pgt_annotations(
    pgt: Mapping[str, Mapping[str, Sequence[ScoredPGTEntry]]],
    sizes: Mapping[str, tuple[int, int]],
) -> list[ImageAnnotation]:
    return [entries_to_annotation(i, pgt[i], sizes.get(i)) for i in sorted(pgt)]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    refined: bool
    report: EvalReport


@dataclass
class RefinementRun:
    initial: EvalReport
    epochs: list[EpochRecord] = field(default_factory=list)
    pgt: PGT = field(default_factory=dict)

    @property
    def refinement_events(self) -> int:
        return sum(r.refined for r in self.epochs)

    def to_csv(self) -> str:
        rows = ["epoch,refined,map", f"0,0,{self.initial.mean_ap:.6f}"]
        rows += [f"{r.epoch},{int(r.refined)},{r.report.mean_ap:.6f}" for r in self.epochs]
        return "\n".join(rows) + "\n"


def run_refinement_loop(
    oracle: DetectorOracle,
    gt: Sequence[ImageAnnotation],
    policy: RefinementPolicy,
    max_epochs: int,
    iou_threshold: float = 0.5,
) -> RefinementRun:
    """Mine the initial PGT from ``oracle``, then run the epoch loop.

    Each epoch advances the oracle; on refinement epochs the oracle is queried
    on every training image and the PGT updated in place of the old one. The
    PGT is scored against ``gt`` after mining (epoch 0) and after every epoch.
    The oracle object is mutated and never rebuilt.
    """
    if max_epochs < 1:
        raise ScheduleError(f"max_epochs must be >= 1, got {max_epochs}")
    gt = sorted(gt, key=lambda a: a.image_id)
    labels = [image_level_labels(a) for a in gt]

    def query() -> list[Detection]:
        return [d for a in gt for d in oracle.detect(a)]

    pgt = mine_dataset_entries(query(), labels, MiningConfig(policy.k))
    run = RefinementRun(initial=evaluate(pgt_detections(pgt), gt, iou_threshold))
    for epoch in range(1, max_epochs + 1):
        oracle.advance_epoch()
        refined = should_refine(epoch, max_epochs, policy.timing)
        if refined:
            pgt = refine_dataset(pgt, query(), labels, policy)
            logger.info("epoch %d: PGT refined", epoch)
        report = evaluate(pgt_detections(pgt), gt, iou_threshold)
        run.epochs.append(EpochRecord(epoch, refined, report))
    run.pgt = pgt
    return run
