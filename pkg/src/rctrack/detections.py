"""Detections and the per-video detection pool."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .geometry import Box


@dataclass(frozen=True)
class Detection:
    frame: int
    box: Box
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.frame < 1:
            raise ValueError(f"frame numbers start at 1, got {self.frame}")


class DetectionPool:
    """All detections of one video, indexed by frame, with consumption flags.

    Detections are addressed by their integer index in :attr:`detections`.
    A detection consumed by one track can never be used by another.
    """

    def __init__(self, detections: Iterable[Detection] = ()):
        self.detections = list(detections)
        n = len(self.detections)
        self.frames = np.array([d.frame for d in self.detections], dtype=np.int64)
        self.xywh = np.array([d.box.as_tuple() for d in self.detections], dtype=float).reshape(n, 4)
        self.conf = np.array([d.confidence for d in self.detections], dtype=float)
        self.consumed = np.zeros(n, dtype=bool)
        self._by_frame: dict[int, np.ndarray] = {}
        if n:
            order = np.argsort(self.frames, kind="stable")
            fr = self.frames[order]
            cuts = np.flatnonzero(np.diff(fr)) + 1
            for chunk in np.split(order, cuts):
                self._by_frame[int(self.frames[chunk[0]])] = chunk

    def __len__(self) -> int:
        return len(self.detections)

    @property
    def last_frame(self) -> int:
        return int(self.frames.max()) if len(self) else 0

    def on_frame(self, frame: int) -> np.ndarray:
        return self._by_frame.get(frame, np.empty(0, dtype=np.intp))

    def unconsumed_on_frame(self, frame: int) -> np.ndarray:
        ids = self.on_frame(frame)
        return ids[~self.consumed[ids]]

    def box(self, i: int) -> Box:
        return self.detections[i].box

    def consume(self, i: int) -> None:
        if self.consumed[i]:
            raise RuntimeError(f"detection {i} already consumed")
        self.consumed[i] = True

    def reset(self) -> None:
        self.consumed[:] = False

    def prefilter(self, threshold: float) -> "DetectionPool":
        """A fresh pool keeping only detections with confidence >= threshold."""
        return DetectionPool(d for d in self.detections if d.confidence >= threshold)

    def overlapping(self, ids: np.ndarray, box: Box) -> np.ndarray:
        """Subset of ``ids`` whose boxes overlap ``box`` with positive area."""
        if ids.size == 0:
            return ids
        b = self.xywh[ids]
        iw = np.minimum(b[:, 0] + b[:, 2], box.x2) - np.maximum(b[:, 0], box.x)
        ih = np.minimum(b[:, 1] + b[:, 3], box.y2) - np.maximum(b[:, 1], box.y)
        return ids[(iw > 0) & (ih > 0)]
