"""Parameters and track containers for the RCT pipeline."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields

from ..geometry import Box
from ..kalman import KalmanState

TRIM_MODES = ("full", "no_offscreen", "touch", "no_onscreen")


@dataclass(frozen=True)
class RctParams:
    """RCT thresholds. Percentages are given in percent (50 means 50%)."""

    h_I: float = 0.5  # minimum confidence of a seed detection
    beta: float = 50.0  # seed box enlargement (%) that must stay onscreen
    delta: int = 4  # bidirectional growth steps
    delta_m: int = 2  # detection-less frames before switching to MedianFlow
    h_u: float = 0.3  # IoU for "same object" when joining overlapping tracks
    d_max: int = 20  # maximum frame gap for joining
    h_q: float = 0.8  # confidence of high-quality seeds
    h_f: float = 0.2  # average IoU above which tracks are redundant
    omega: float = 1.0  # offscreen percentage that ends a track
    alpha: float = 1.1  # per-frame velocity gain while exiting
    delta_n: int = 5  # inferred tail boxes needed before trimming them
    use_medianflow: bool = True
    use_joining: bool = True
    use_size_filter: bool = True
    trim_mode: str = "full"

    def __post_init__(self) -> None:
        for name in ("h_I", "h_u", "h_q", "h_f"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("beta", "omega"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("delta", "delta_m", "d_max", "delta_n"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
        if self.alpha < 1.0:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if self.trim_mode not in TRIM_MODES:
            raise ValueError(f"trim_mode must be one of {TRIM_MODES}, got {self.trim_mode!r}")

    @classmethod
    def field_types(cls) -> dict[str, type]:
        hints = {"float": float, "int": int, "bool": bool, "str": str}
        return {f.name: hints[f.type] if isinstance(f.type, str) else f.type for f in fields(cls)}


class Source(enum.Enum):
    DETECTION = "detection"
    MOTION = "motion"
    SOT = "sot"
    MISSING = "missing"


@dataclass
class TrackBox:
    frame: int
    box: Box | None
    source: Source
    confidence: float = 0.0
    det_id: int | None = None
    # raw observation handed to the smoother (detection or MedianFlow box)
    obs: Box | None = None

    @property
    def observed(self) -> bool:
        return self.source in (Source.DETECTION, Source.SOT)


@dataclass
class Track:
    id: int
    init_frame: int
    init_confidence: float
    boxes: dict[int, TrackBox] = field(default_factory=dict)
    kalman_states: dict[int, KalmanState] = field(default_factory=dict)

    @property
    def frames(self) -> list[int]:
        return sorted(self.boxes)

    @property
    def first(self) -> int:
        return min(self.boxes)

    @property
    def last(self) -> int:
        return max(self.boxes)

    def __len__(self) -> int:
        return len(self.boxes)

    def observed_frames(self) -> list[int]:
        return [f for f in self.frames if self.boxes[f].observed]

    def box_at(self, frame: int) -> Box | None:
        tb = self.boxes.get(frame)
        return None if tb is None else tb.box

    def is_contiguous(self) -> bool:
        fr = self.frames
        return not fr or (fr[-1] - fr[0] + 1 == len(fr) and all(self.boxes[f].box is not None for f in fr))

    def size(self) -> float:
        """Total box area summed over the track's frames."""
        return sum(tb.box.area for tb in self.boxes.values() if tb.box is not None)
