"""Recall metrics over ranked proposal sets with difficulty filtering.

A ground-truth object counts as matched at budget K and threshold t when at
least one of the first K ranked proposals overlaps it with IoU >= t. One
proposal may cover several ground-truth objects (no assignment step).
Recall with zero ground truth after filtering is *undefined* (recall=None),
never 0, so cross-dataset averages stay honest.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import GroundTruthObject, Scene
from .errors import InvalidArgumentError

__all__ = [
    "DifficultyFilter",
    "DIFFICULTY_PRESETS",
    "RecallPoint",
    "RecallCurve",
    "DEFAULT_BUDGETS",
    "DEFAULT_IOU_THRESHOLDS",
    "gt_matched",
    "recall",
    "recall_vs_k",
    "recall_vs_iou",
    "average_recall",
    "oracle_rankings",
    "write_curve_csv",
]

DEFAULT_BUDGETS = (10, 50, 100, 500, 1000, 1500, 2000, 3000, 4000, 5000)
DEFAULT_IOU_THRESHOLDS = tuple(i / 100 for i in range(50, 101, 5))  # 0.50 .. 1.00


@dataclass(frozen=True)
class DifficultyFilter:
    min_box_height_px: float = 0.0
    max_occlusion: int = 3
    max_truncation: float = 1.0

    def __post_init__(self):
        if self.min_box_height_px < 0:
            raise InvalidArgumentError("min_box_height_px must be >= 0")
        if not 0.0 <= self.max_truncation <= 1.0:
            raise InvalidArgumentError("max_truncation must lie in [0,1]")

    def admits(self, gt: GroundTruthObject) -> bool:
        return (
            gt.box.height >= self.min_box_height_px
            and gt.occlusion <= self.max_occlusion
            and gt.truncation <= self.max_truncation
        )


# KITTI-convention defaults; the levels are named in the benchmark, the
# numeric cutoffs are configurable.
DIFFICULTY_PRESETS: dict[str, DifficultyFilter] = {
    "easy": DifficultyFilter(40.0, 0, 0.15),
    "moderate": DifficultyFilter(25.0, 1, 0.30),
    "hard": DifficultyFilter(25.0, 2, 0.50),
    "none": DifficultyFilter(),
}


@dataclass(frozen=True)
class RecallPoint:
    axis_value: float
    recall: Optional[float]  # None = undefined (zero ground truth)
    matched: int
    total: int


@dataclass(frozen=True)
class RecallCurve:
    axis: str  # "k" or "iou"
    points: tuple[RecallPoint, ...]
    fixed_iou: Optional[float] = None
    fixed_k: Optional[int] = None


def _box_iou_one_vs_many(gt_box, boxes: np.ndarray) -> np.ndarray:
    """IoU of one box against an (n, 4) array; mirrors core.iou exactly."""
    if boxes.size == 0:
        return np.zeros(0)
    ix = np.minimum(gt_box.x2, boxes[:, 2]) - np.maximum(gt_box.x1, boxes[:, 0])
    iy = np.minimum(gt_box.y2, boxes[:, 3]) - np.maximum(gt_box.y1, boxes[:, 1])
    inter = np.where((ix > 0) & (iy > 0), ix * iy, 0.0)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    union = gt_box.area + areas - inter
    out = np.zeros(len(boxes))
    hit = inter > 0
    out[hit] = inter[hit] / union[hit]
    return out


def gt_matched(gt: GroundTruthObject, ranked_proposals, k: int, t: float) -> bool:
    """True iff a proposal among the first min(k, n) overlaps gt with IoU >= t."""
    if k < 0:
        raise InvalidArgumentError("budget K must be >= 0")
    if not 0.0 < t <= 1.0:
        raise InvalidArgumentError(f"IoU threshold must lie in (0,1], got {t}")
    if k == 0:
        return False
    boxes = np.array(
        [[p.box.x1, p.box.y1, p.box.x2, p.box.y2] for p in ranked_proposals[:k]]
    ).reshape(-1, 4)
    ious = _box_iou_one_vs_many(gt.box, boxes)
    return bool(ious.size) and bool(ious.max() >= t)


Rankings = Optional[Mapping[str, Sequence[int]]]


def _prefix_best_ious(
    scenes: Sequence[Scene],
    class_id: int,
    filt: Optional[DifficultyFilter],
    rankings: Rankings,
) -> list[np.ndarray]:
    """Per filtered GT object of class_id, the running max IoU over the ranked
    proposal list; best IoU within budget K is then prefix[min(K, n) - 1]."""
    if class_id < 0:
        raise InvalidArgumentError(f"invalid class id {class_id}")
    out: list[np.ndarray] = []
    for scene in scenes:
        gts = [
            gt
            for gt in scene.ground_truth
            if gt.class_id == class_id and (filt is None or filt.admits(gt))
        ]
        if not gts:
            continue
        order = None if rankings is None else rankings.get(scene.id)
        props = scene.proposals if order is None else [scene.proposals[i] for i in order]
        boxes = np.array([[p.box.x1, p.box.y1, p.box.x2, p.box.y2] for p in props]).reshape(-1, 4)
        for gt in gts:
            ious = _box_iou_one_vs_many(gt.box, boxes)
            out.append(np.maximum.accumulate(ious) if ious.size else ious)
    return out


def _point_from_prefix(prefix: list[np.ndarray], k: int, t: float, axis_value: float) -> RecallPoint:
    total = len(prefix)
    if total == 0:
        return RecallPoint(axis_value=axis_value, recall=None, matched=0, total=0)
    matched = 0
    for best in prefix:
        if k > 0 and best.size and best[min(k, best.size) - 1] >= t:
            matched += 1
    return RecallPoint(axis_value=axis_value, recall=matched / total, matched=matched, total=total)


def recall(
    scenes: Sequence[Scene],
    class_id: int,
    k: int,
    t: float,
    filt: Optional[DifficultyFilter] = None,
    rankings: Rankings = None,
) -> RecallPoint:
    """Fraction of filtered GT objects of class_id matched within budget k at IoU t."""
    if k < 0:
        raise InvalidArgumentError("budget K must be >= 0")
    if not 0.0 < t <= 1.0:
        raise InvalidArgumentError(f"IoU threshold must lie in (0,1], got {t}")
    prefix = _prefix_best_ious(scenes, class_id, filt, rankings)
    return _point_from_prefix(prefix, k, t, axis_value=k)


def recall_vs_k(
    scenes: Sequence[Scene],
    class_id: int,
    t: float,
    budgets: Sequence[int] = DEFAULT_BUDGETS,
    filt: Optional[DifficultyFilter] = None,
    rankings: Rankings = None,
) -> RecallCurve:
    budgets = list(budgets)
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])) or not budgets:
        raise InvalidArgumentError("budgets must be a non-empty strictly ascending list")
    if not 0.0 < t <= 1.0:
        raise InvalidArgumentError(f"IoU threshold must lie in (0,1], got {t}")
    prefix = _prefix_best_ious(scenes, class_id, filt, rankings)
    points = tuple(_point_from_prefix(prefix, k, t, axis_value=k) for k in budgets)
    return RecallCurve(axis="k", points=points, fixed_iou=t)


def recall_vs_iou(
    scenes: Sequence[Scene],
    class_id: int,
    k: int = 500,
    thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
    filt: Optional[DifficultyFilter] = None,
    rankings: Rankings = None,
) -> RecallCurve:
    thresholds = list(thresholds)
    if not thresholds or any(not 0.0 < t <= 1.0 for t in thresholds):
        raise InvalidArgumentError("thresholds must be non-empty and lie in (0,1]")
    prefix = _prefix_best_ious(scenes, class_id, filt, rankings)
    points = tuple(_point_from_prefix(prefix, k, t, axis_value=t) for t in thresholds)
    return RecallCurve(axis="iou", points=points, fixed_k=k)


def average_recall(
    scenes: Sequence[Scene],
    class_id: int,
    k: int,
    filt: Optional[DifficultyFilter] = None,
    rankings: Rankings = None,
) -> Optional[float]:
    """Arithmetic mean of recall over the 11 IoU thresholds 0.50 .. 1.00."""
    curve = recall_vs_iou(scenes, class_id, k, DEFAULT_IOU_THRESHOLDS, filt, rankings)
    values = [p.recall for p in curve.points]
    if any(v is None for v in values):
        return None
    return sum(values) / len(values)


def oracle_rankings(
    scenes: Sequence[Scene],
    class_id: int,
    filt: Optional[DifficultyFilter] = None,
) -> dict[str, list[int]]:
    """Rank each scene's proposals by true IoU against its filtered GT objects
    of class_id (max over objects), descending, ties by generator rank.

    The recall upper bound this yields is exact for single-GT scenes."""
    out: dict[str, list[int]] = {}
    for scene in scenes:
        gts = [
            gt
            for gt in scene.ground_truth
            if gt.class_id == class_id and (filt is None or filt.admits(gt))
        ]
        n = len(scene.proposals)
        if not gts or n == 0:
            out[scene.id] = list(range(n))
            continue
        boxes = np.array(
            [[p.box.x1, p.box.y1, p.box.x2, p.box.y2] for p in scene.proposals]
        )
        best = np.max(
            np.stack([_box_iou_one_vs_many(gt.box, boxes) for gt in gts]), axis=0
        )
        out[scene.id] = sorted(range(n), key=lambda i: (-best[i], i))
    return out


def write_curve_csv(curve: RecallCurve, path: str) -> None:
    """CSV: header axis,value,recall,matched,total; full decimal precision;
    undefined recall serialized as 'nan'."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["axis", "value", "recall", "matched", "total"])
        for p in curve.points:
            rec = "nan" if p.recall is None else repr(p.recall)
            writer.writerow([curve.axis, repr(float(p.axis_value)), rec, p.matched, p.total])
