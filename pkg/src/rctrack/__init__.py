"""Offline multi-object tracking driven by detection confidence."""
__version__ = "0.1.0"

from .detections import Detection, DetectionPool
from .geometry import Box, FrameDims
from .metrics import EvalReport, evaluate
from .rct import RctParams, Track, run_rct

__all__ = ["Box", "FrameDims", "Detection", "DetectionPool", "EvalReport", "evaluate", "RctParams", "Track",
           "run_rct", "__version__"]
