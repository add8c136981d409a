"""Axis-aligned boxes, points and greedy non-maximum suppression."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")


@dataclass(frozen=True)
class Box:
    """Corner-coordinate rectangle ``(x_min, y_min, x_max, y_max)`` in pixels."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box {coords}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def to_xywh(self) -> list[float]:
        return [self.x_min, self.y_min, self.width, self.height]

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        return cls(x, y, x + w, y + h)

    def clip(self, width: float, height: float) -> "Box":
        x0 = min(max(self.x_min, 0.0), width)
        y0 = min(max(self.y_min, 0.0), height)
        x1 = min(max(self.x_max, 0.0), width)
        y1 = min(max(self.y_max, 0.0), height)
        return Box(x0, y0, x1, y1)


@dataclass(frozen=True)
class ScoredBox:
    box: Box
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


def box_area(b: Box) -> float:
    return (b.x_max - b.x_min) * (b.y_max - b.y_min)


def box_iou(a: Box, b: Box) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = box_area(a) + box_area(b) - inter
    return inter / union if union > 0 else 0.0


def box_center(b: Box) -> Point:
    return Point((b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2)


def boxes_to_array(boxes: Sequence[Box]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)


def iou_one_to_many(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    """IoU of one ``(4,)`` box against ``(n, 4)`` boxes.

    Uses the same operation order as :func:`box_iou` so both give
    bit-identical results.
    """
    iw = np.minimum(box[2], others[:, 2]) - np.maximum(box[0], others[:, 0])
    ih = np.minimum(box[3], others[:, 3]) - np.maximum(box[1], others[:, 1])
    overlap = (iw > 0) & (ih > 0)
    inter = np.where(overlap, iw * ih, 0.0)
    area_a = (box[2] - box[0]) * (box[3] - box[1])
    area_b = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    union = area_a + area_b - inter
    out = np.zeros(len(others), dtype=np.float64)
    ok = overlap & (union > 0)
    out[ok] = inter[ok] / union[ok]
    return out


def nms(candidates: Sequence[ScoredBox], iou_threshold: float) -> list[int]:
    """Greedy NMS returning kept indices in descending score order.

    A box is suppressed when its IoU with an already kept box is strictly
    greater than ``iou_threshold``. Equal scores keep the lower index first.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold {iou_threshold} outside [0, 1]")
    n = len(candidates)
    if n == 0:
        return []
    boxes = boxes_to_array([c.box for c in candidates])
    scores = np.array([c.score for c in candidates], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    alive = np.ones(n, dtype=bool)
    kept: list[int] = []
    for pos, idx in enumerate(order):
        if not alive[pos]:
            continue
        kept.append(int(idx))
        rest = order[pos + 1:]
        if rest.size == 0:
            break
        ious = iou_one_to_many(boxes[idx], boxes[rest])
        alive[pos + 1:] &= ~(ious > iou_threshold)
    return kept
