"""Box geometry and the small value types shared by every module.

Boxes are ``(x, y, w, h)`` with ``(x, y)`` the top-left corner, in continuous
pixel coordinates. Arrays of boxes use the same column order, shape ``(n, 4)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBox


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box {vals}")

    @classmethod
    def from_array(cls, a) -> "BBox":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @classmethod
    def from_ltrb(cls, left, top, right, bottom) -> "BBox":
        return cls(float(left), float(top), float(right - left), float(bottom - top))

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=float)

    def ltrb(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + 0.5 * self.w, self.y + 0.5 * self.h)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes."""
    if a == b:
        return 1.0
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return min(1.0, inter / union)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between two ``(n, 4)`` / ``(m, 4)`` box arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    ax2 = a[:, 0] + a[:, 2]
    ay2 = a[:, 1] + a[:, 3]
    bx2 = b[:, 0] + b[:, 2]
    by2 = b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, 0][:, None], b[:, 0][None, :])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, 1][:, None], b[:, 1][None, :])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    out[(a[:, None, :] == b[None, :, :]).all(axis=2)] = 1.0
    return np.clip(out, 0.0, 1.0)


def overlap_min_area(a, b) -> np.ndarray:
    """Pairwise intersection divided by the smaller of the two areas."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, 0, None] + a[:, 2, None], b[None, :, 0] + b[None, :, 2]) - np.maximum(
        a[:, 0, None], b[None, :, 0]
    )
    ih = np.minimum(a[:, 1, None] + a[:, 3, None], b[None, :, 1] + b[None, :, 3]) - np.maximum(
        a[:, 1, None], b[None, :, 1]
    )
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    small = np.minimum((a[:, 2] * a[:, 3])[:, None], (b[:, 2] * b[:, 3])[None, :])
    return np.clip(inter / small, 0.0, 1.0)


def clip_to_frame(b: BBox, frame_w: float, frame_h: float) -> BBox:
    """Intersect ``b`` with the frame rectangle ``[0, frame_w] x [0, frame_h]``."""
    if frame_w <= 0 or frame_h <= 0:
        raise ValueError("frame dimensions must be positive")
    x2 = b.x + b.w
    y2 = b.y + b.h
    if b.x >= 0 and b.y >= 0 and x2 <= frame_w and y2 <= frame_h:
        return b
    x1 = max(b.x, 0.0)
    y1 = max(b.y, 0.0)
    x2 = min(x2, float(frame_w))
    y2 = min(y2, float(frame_h))
    if x2 <= x1 or y2 <= y1:
        raise EmptyBox(f"{b} lies outside the {frame_w}x{frame_h} frame")
    return BBox(x1, y1, x2 - x1, y2 - y1)


def clip_boxes(boxes, frame_w, frame_h):
    """Vectorized clipping; returns ``(clipped, nonempty_mask)``."""
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    x1 = np.maximum(boxes[:, 0], 0.0)
    y1 = np.maximum(boxes[:, 1], 0.0)
    x2 = np.minimum(boxes[:, 0] + boxes[:, 2], float(frame_w))
    y2 = np.minimum(boxes[:, 1] + boxes[:, 3], float(frame_h))
    out = np.stack([x1, y1, x2 - x1, y2 - y1], axis=1)
    return out, (out[:, 2] > 0) & (out[:, 3] > 0)
