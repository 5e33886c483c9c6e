"""Summed-area tables for O(1) box sums over binary pixel predicates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError

__all__ = ["IntegralImage", "build", "from_mask", "box_sum"]


@dataclass(frozen=True)
class IntegralImage:
    """Cumulative counts: table[r, c] = number of set pixels with row < r, col < c."""

    width: int
    height: int
    table: np.ndarray  # (height+1, width+1) int64

    def __post_init__(self):
        self.table.setflags(write=False)

    @property
    def total(self) -> int:
        return int(self.table[self.height, self.width])


def from_mask(mask: np.ndarray) -> IntegralImage:
    """Build a table from an (h, w) binary/boolean array."""
    if mask.ndim != 2 or mask.size == 0:
        raise InvalidArgumentError(f"mask must be a non-empty 2D array, got shape {mask.shape}")
    h, w = mask.shape
    table = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(mask.astype(np.int64), axis=0), axis=1, out=table[1:, 1:])
    return IntegralImage(width=w, height=h, table=table)


def build(w: int, h: int, predicate: Callable[[int, int], int]) -> IntegralImage:
    """Build a table by evaluating predicate(col, row) over every pixel."""
    if w < 1 or h < 1:
        raise InvalidArgumentError(f"image dimensions must be positive, got {w}x{h}")
    mask = np.empty((h, w), dtype=np.int64)
    for row in range(h):
        for col in range(w):
            mask[row, col] = 1 if predicate(col, row) else 0
    return from_mask(mask)


def box_sum(img: IntegralImage, rect: tuple[int, int, int, int] | None) -> int:
    """Count of set pixels inside the half-open rect (col0, row0, col1, row1)."""
    if rect is None:
        return 0
    col0, row0, col1, row1 = rect
    if not (0 <= col0 and col1 <= img.width and 0 <= row0 and row1 <= img.height):
        raise InvalidArgumentError(
            f"rect {rect} outside table bounds {img.width}x{img.height}; clip first"
        )
    if col0 >= col1 or row0 >= row1:
        return 0
    t = img.table
    return int(t[row1, col1] - t[row0, col1] - t[row1, col0] + t[row0, col0])
