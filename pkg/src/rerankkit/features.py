"""Per-proposal feature vectors for the class-specific linear scorer.

Layout of the 7-component vector (fixed, version-tagged in the model file):

    0  sem_class   fraction of in-box pixels labeled with the target class
    1  sem_road    fraction of in-box pixels labeled road
    2  height      minus the fraction of in-box pixels taller than tau
    3  ctx_road    road fraction of the contextual rectangle below the box
    4  ctx_height  height feature of the contextual rectangle
    5  cnn         objectness passthrough
    6  low         generator ranking-score passthrough

Mask-derived components come from one integral image per predicate, built
once per scene; an off-image (empty clipped) rectangle contributes 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import integral
from .core import BoundingBox, Proposal, Scene, clip_to_pixels
from .errors import InvalidArgumentError

__all__ = [
    "NUM_FEATURES",
    "SEM_CLASS",
    "SEM_ROAD",
    "HEIGHT",
    "CTX_ROAD",
    "CTX_HEIGHT",
    "CNN",
    "LOW",
    "FeatureConfig",
    "SceneTables",
    "seg_ratio",
    "height_feature",
    "context_box",
    "extract",
    "extract_all",
]

NUM_FEATURES = 7
SEM_CLASS, SEM_ROAD, HEIGHT, CTX_ROAD, CTX_HEIGHT, CNN, LOW = range(NUM_FEATURES)


@dataclass(frozen=True)
class FeatureConfig:
    road_class_id: int
    tau: float = 2.5
    context_height_ratio: float = 1.0 / 3.0

    def __post_init__(self):
        if self.tau <= 0:
            raise InvalidArgumentError(f"tau must be positive, got {self.tau}")
        if self.context_height_ratio <= 0:
            raise InvalidArgumentError(
                f"context_height_ratio must be positive, got {self.context_height_ratio}"
            )


class SceneTables:
    """Integral images for one scene: one per object class, one for road,
    one for the height-exceeds-tau indicator. NaN heights (no valid depth)
    never exceed tau."""

    def __init__(self, scene: Scene, class_ids, config: FeatureConfig):
        self.scene = scene
        self.config = config
        self.class_tables = {
            cid: integral.from_mask(scene.seg_mask == cid) for cid in class_ids
        }
        self.road_table = integral.from_mask(scene.seg_mask == config.road_class_id)
        # NaN > tau is False, so sentinel pixels count as not exceeding.
        self.height_table = integral.from_mask(scene.height_map > config.tau)

    def class_table(self, class_id: int) -> integral.IntegralImage:
        try:
            return self.class_tables[class_id]
        except KeyError:
            raise InvalidArgumentError(f"no table built for class {class_id}") from None


def _rect_area(rect: tuple[int, int, int, int] | None) -> int:
    if rect is None:
        return 0
    col0, row0, col1, row1 = rect
    return (col1 - col0) * (row1 - row0)


def seg_ratio(tables: SceneTables, rect, class_id: int) -> float:
    """Fraction of pixels in rect labeled class_id; 0 for an empty rect."""
    area = _rect_area(rect)
    if area == 0:
        return 0.0
    return integral.box_sum(tables.class_table(class_id), rect) / area


def _road_ratio(tables: SceneTables, rect) -> float:
    area = _rect_area(rect)
    if area == 0:
        return 0.0
    return integral.box_sum(tables.road_table, rect) / area


def height_feature(tables: SceneTables, rect) -> float:
    """Minus the fraction of rect pixels whose height exceeds tau; in [-1, 0]."""
    area = _rect_area(rect)
    if area == 0:
        return 0.0
    return -(integral.box_sum(tables.height_table, rect) / area)


def context_box(b: BoundingBox, ratio: float) -> BoundingBox:
    """Rectangle directly below b: same width, height = ratio * height(b).

    Unclipped; clipping (and the empty -> 0 convention) happens at extraction.
    """
    return BoundingBox(b.x1, b.y2, b.x2, b.y2 + ratio * (b.y2 - b.y1))


def extract(
    scene: Scene,
    proposal: Proposal,
    class_id: int,
    config: FeatureConfig,
    tables: SceneTables | None = None,
) -> np.ndarray:
    """The 7-component feature vector for one proposal."""
    if tables is None:
        tables = SceneTables(scene, [class_id], config)
    rect = clip_to_pixels(proposal.box, scene.width, scene.height)
    ctx = clip_to_pixels(
        context_box(proposal.box, config.context_height_ratio), scene.width, scene.height
    )
    f = np.zeros(NUM_FEATURES, dtype=np.float64)
    f[SEM_CLASS] = seg_ratio(tables, rect, class_id)
    f[SEM_ROAD] = _road_ratio(tables, rect)
    f[HEIGHT] = height_feature(tables, rect)
    f[CTX_ROAD] = _road_ratio(tables, ctx)
    f[CTX_HEIGHT] = height_feature(tables, ctx)
    f[CNN] = proposal.objectness
    f[LOW] = proposal.generator_score
    return f


def _clip_batch(boxes: np.ndarray, w: int, h: int):
    """Vectorized clip_to_pixels over an (n, 4) box array.

    Returns (rects int64 (n, 4) as col0,row0,col1,row1; empty mask).
    Rounding matches the scalar half-away-from-zero rule.
    """
    rounded = np.where(boxes >= 0.0, np.floor(boxes + 0.5), np.ceil(boxes - 0.5)).astype(np.int64)
    col0 = np.maximum(0, rounded[:, 0])
    row0 = np.maximum(0, rounded[:, 1])
    col1 = np.minimum(w, rounded[:, 2])
    row1 = np.minimum(h, rounded[:, 3])
    empty = (col0 >= col1) | (row0 >= row1)
    rects = np.stack([col0, row0, col1, row1], axis=1)
    return rects, empty


def _batch_ratio(table: integral.IntegralImage, rects: np.ndarray, empty: np.ndarray) -> np.ndarray:
    t = table.table
    col0, row0, col1, row1 = (rects[:, k] for k in range(4))
    # Clamp empties to a degenerate query to keep indexing valid; zeroed below.
    c0 = np.where(empty, 0, col0)
    r0 = np.where(empty, 0, row0)
    c1 = np.where(empty, 0, col1)
    r1 = np.where(empty, 0, row1)
    counts = t[r1, c1] - t[r0, c1] - t[r1, c0] + t[r0, c0]
    area = (c1 - c0) * (r1 - r0)
    ratio = np.zeros(len(rects), dtype=np.float64)
    ok = ~empty
    ratio[ok] = counts[ok] / area[ok]
    return ratio


def extract_all(scene: Scene, class_id: int, config: FeatureConfig) -> np.ndarray:
    """Feature matrix (n_proposals, 7), rows in generator order.

    Builds each integral table exactly once; numerators are integer box sums,
    so results equal the per-proposal path exactly (division is the only
    floating-point step and both paths perform the identical one).
    """
    tables = SceneTables(scene, [class_id], config)
    n = len(scene.proposals)
    out = np.zeros((n, NUM_FEATURES), dtype=np.float64)
    if n == 0:
        return out
    boxes = np.array(
        [[p.box.x1, p.box.y1, p.box.x2, p.box.y2] for p in scene.proposals], dtype=np.float64
    )
    ctx_h = config.context_height_ratio * (boxes[:, 3] - boxes[:, 1])
    ctx_boxes = np.stack([boxes[:, 0], boxes[:, 3], boxes[:, 2], boxes[:, 3] + ctx_h], axis=1)

    rects, empty = _clip_batch(boxes, scene.width, scene.height)
    ctx_rects, ctx_empty = _clip_batch(ctx_boxes, scene.width, scene.height)

    cls_table = tables.class_table(class_id)
    out[:, SEM_CLASS] = _batch_ratio(cls_table, rects, empty)
    out[:, SEM_ROAD] = _batch_ratio(tables.road_table, rects, empty)
    out[:, HEIGHT] = -_batch_ratio(tables.height_table, rects, empty)
    out[:, CTX_ROAD] = _batch_ratio(tables.road_table, ctx_rects, ctx_empty)
    out[:, CTX_HEIGHT] = -_batch_ratio(tables.height_table, ctx_rects, ctx_empty)
    out[:, CNN] = [p.objectness for p in scene.proposals]
    out[:, LOW] = [p.generator_score for p in scene.proposals]
    return out
