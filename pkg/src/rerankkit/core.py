"""Geometric primitives, scene container, and box IoU.

Boxes use a half-open pixel convention: (x1, y1) is the inclusive top-left
corner, (x2, y2) the exclusive bottom-right, so clipped integer rectangles
have exact integer areas. Datasets with inclusive corners (KITTI labels)
are converted on ingest by adding 1 to the bottom-right corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "BoundingBox",
    "Proposal",
    "GroundTruthObject",
    "Scene",
    "iou",
    "clip_to_pixels",
]


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def is_valid(self) -> bool:
        return self.x1 < self.x2 and self.y1 < self.y2

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


@dataclass(frozen=True)
class Proposal:
    box: BoundingBox
    generator_score: float
    objectness: float

    def __post_init__(self):
        if not math.isfinite(self.generator_score):
            raise InvalidArgumentError(f"generator_score must be finite, got {self.generator_score}")
        if not 0.0 <= self.objectness <= 1.0:
            raise InvalidArgumentError(f"objectness must lie in [0,1], got {self.objectness}")


@dataclass(frozen=True)
class GroundTruthObject:
    class_id: int
    box: BoundingBox
    occlusion: int = 0
    truncation: float = 0.0

    def __post_init__(self):
        if self.occlusion not in (0, 1, 2, 3):
            raise InvalidArgumentError(f"occlusion must be in {{0,1,2,3}}, got {self.occlusion}")
        if not 0.0 <= self.truncation <= 1.0:
            raise InvalidArgumentError(f"truncation must lie in [0,1], got {self.truncation}")


@dataclass(frozen=True)
class Scene:
    """One image's worth of inputs.

    ``seg_mask`` holds per-pixel class ids, ``height_map`` per-pixel heights
    in meters (NaN marks pixels with no valid height). Proposal order is the
    source generator's rank. Arrays are frozen after construction.
    """

    id: str
    width: int
    height: int
    seg_mask: np.ndarray
    height_map: np.ndarray
    proposals: tuple[Proposal, ...] = field(default_factory=tuple)
    ground_truth: tuple[GroundTruthObject, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError(f"scene dimensions must be positive, got {self.width}x{self.height}")
        if self.seg_mask.shape != (self.height, self.width):
            raise InvalidArgumentError(
                f"seg_mask shape {self.seg_mask.shape} does not match scene {self.height}x{self.width}"
            )
        if self.height_map.shape != (self.height, self.width):
            raise InvalidArgumentError(
                f"height_map shape {self.height_map.shape} does not match scene {self.height}x{self.width}"
            )
        object.__setattr__(self, "proposals", tuple(self.proposals))
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))
        self.seg_mask.setflags(write=False)
        self.height_map.setflags(write=False)


def _require_valid(b: BoundingBox, name: str) -> None:
    if not b.is_valid():
        raise InvalidArgumentError(f"{name} is degenerate: ({b.x1}, {b.y1}, {b.x2}, {b.y2})")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two valid boxes, in [0, 1].

    Computed on the real-valued coordinates, not on clipped pixel rects.
    """
    _require_valid(a, "box a")
    _require_valid(b, "box b")
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def _round_half_away(v: float) -> int:
    if v >= 0.0:
        return int(math.floor(v + 0.5))
    return int(math.ceil(v - 0.5))


def clip_to_pixels(b: BoundingBox, w: int, h: int) -> tuple[int, int, int, int] | None:
    """Map a real-valued box onto the integer pixel grid of a w x h image.

    Corners are rounded half-away-from-zero, then clamped. Returns
    (col0, row0, col1, row1) half-open, or None when nothing remains.
    """
    if w < 1 or h < 1:
        raise InvalidArgumentError(f"image dimensions must be positive, got {w}x{h}")
    col0 = max(0, _round_half_away(b.x1))
    row0 = max(0, _round_half_away(b.y1))
    col1 = min(w, _round_half_away(b.x2))
    row1 = min(h, _round_half_away(b.y2))
    if col0 >= col1 or row0 >= row1:
        return None
    return (col0, row0, col1, row1)
