"""Axis-aligned box arithmetic.

Boxes use the top-left + width/height convention of MOT-style files and are
continuous: coordinates are real-valued and may lie partly or wholly outside
the frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w >= 0 and self.h >= 0):
            raise ValueError(f"box width/height must be >= 0, got {self.w}x{self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def degenerate(self) -> bool:
        return self.w == 0 or self.h == 0

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "Box":
        w = max(float(w), 0.0)
        h = max(float(h), 0.0)
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_tuple())


@dataclass(frozen=True)
class FrameDims:
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"frame dimensions must be positive, got {self.width}x{self.height}")


def intersection_area(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def overlaps(a: Box, b: Box) -> bool:
    """True when the boxes share a region of positive area."""
    return intersection_area(a, b) > 0.0


def iou(a: Box, b: Box) -> float:
    if a == b:
        return 1.0 if a.area > 0 else 0.0
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    # edge round-off can push the ratio a hair past 1
    return min(inter / union, 1.0)


def center(b: Box) -> tuple[float, float]:
    return (b.x + b.w / 2.0, b.y + b.h / 2.0)


def diou(a: Box, b: Box) -> float:
    """Distance-IoU dissimilarity, ``1 - IoU + d^2 / g^2``.

    ``d`` is the distance between the box centers and ``g`` the diagonal of
    the smallest box enclosing both. Lower is better; the value lies in
    ``[0, 2)``. A coincident pair of degenerate boxes has no enclosing
    diagonal and scores 0.
    """
    ex = max(a.x2, b.x2) - min(a.x, b.x)
    ey = max(a.y2, b.y2) - min(a.y, b.y)
    g2 = ex * ex + ey * ey
    if g2 <= 0:
        return 0.0
    (ax, ay), (bx, by) = center(a), center(b)
    d2 = (ax - bx) ** 2 + (ay - by) ** 2
    return 1.0 - iou(a, b) + d2 / g2


def contains_point(b: Box, p: tuple[float, float]) -> bool:
    px, py = p
    return b.x <= px <= b.x2 and b.y <= py <= b.y2


def offscreen_fraction(b: Box, dims: FrameDims) -> tuple[float, float]:
    """Offscreen width and height of ``b`` as fractions of the frame size.

    The visible part of a box is its intersection with the frame. When that
    intersection is empty the whole box is offscreen, so both its width and its
    height count as offscreen.
    """
    if clip_to_frame(b, dims) is None:
        return (b.w / dims.width, b.h / dims.height)
    # measured from the edges so an inside box gives exactly zero
    off_w = min(max(-b.x, 0.0) + max(b.x2 - dims.width, 0.0), b.w)
    off_h = min(max(-b.y, 0.0) + max(b.y2 - dims.height, 0.0), b.h)
    return (off_w / dims.width, off_h / dims.height)


def offscreen_score(b: Box, dims: FrameDims) -> float:
    """Scalar "how offscreen" measure: the sum of both offscreen fractions."""
    fw, fh = offscreen_fraction(b, dims)
    return fw + fh


def is_onscreen(b: Box, dims: FrameDims) -> bool:
    return b.x >= 0 and b.y >= 0 and b.x2 <= dims.width and b.y2 <= dims.height


def enlarge(b: Box, pct: float) -> Box:
    if pct < 0:
        raise ValueError("enlargement percentage must be >= 0")
    s = 1.0 + pct / 100.0
    cx, cy = center(b)
    return Box.from_center(cx, cy, b.w * s, b.h * s)


def clip_to_frame(b: Box, dims: FrameDims) -> Box | None:
    """Visible part of ``b``, or None when nothing of it is onscreen."""
    x1, y1 = max(b.x, 0.0), max(b.y, 0.0)
    x2, y2 = min(b.x2, float(dims.width)), min(b.y2, float(dims.height))
    if x2 <= x1 or y2 <= y1:
        return None
    return Box(x1, y1, x2 - x1, y2 - y1)
