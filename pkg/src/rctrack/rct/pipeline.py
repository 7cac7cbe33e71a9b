"""The full tracking pipeline: seeded growth, then the post-build stages."""
from __future__ import annotations

import logging
import time

from ..detections import DetectionPool
from ..geometry import FrameDims
from ..kalman import KalmanConfig
from ..medianflow import MedianFlowConfig
from .build import SeedQueue, TrackBuilder, TrackingTimeout, check_deadline
from .post import filter_tracks, join_tracks, remove_redundant, replace_after_build, trim_tracks
from .types import RctParams, Track

log = logging.getLogger(__name__)

__all__ = ["run_rct", "TrackingTimeout"]


def run_rct(pool: DetectionPool, video, params: RctParams = RctParams(), dims: FrameDims | None = None,
            num_frames: int | None = None, kalman_cfg: KalmanConfig | None = None,
            mf_cfg: MedianFlowConfig | None = None, timeout: float | None = None) -> list[Track]:
    """Track every object in one video.

    ``video`` may be None, in which case the MedianFlow stages are skipped.
    ``dims`` and ``num_frames`` default to the video's; without a video both
    must be given (``num_frames`` falls back to the last detection frame).
    The pool's consumption flags are reset first, so a pool can be reused.
    Raises :class:`TrackingTimeout` when ``timeout`` seconds elapse.
    """
    deadline = None if timeout is None else time.monotonic() + timeout
    kcfg = kalman_cfg or KalmanConfig()
    mcfg = mf_cfg or MedianFlowConfig()
    if video is not None:
        dims = dims or video.dims
        num_frames = num_frames or video.num_frames
    if dims is None:
        raise ValueError("frame dimensions are required when no video is given")
    if num_frames is None:
        num_frames = pool.last_frame
    if len(pool) and pool.last_frame > num_frames:
        raise ValueError(f"detections reach frame {pool.last_frame} but the video has {num_frames} frames")
    if video is None and params.use_medianflow:
        log.warning("no frames available; running without the MedianFlow fallback")
    pool.reset()

    builder = TrackBuilder(pool, video, params, dims, num_frames, kcfg, mcfg, deadline)
    seeds = SeedQueue(pool, params, dims)
    tracks: list[Track] = []
    while True:
        check_deadline(deadline)
        seed = seeds.next()
        if seed is None:
            break
        t = builder.build(seed, len(tracks) + 1)
        tracks.append(t)
        seeds.add_track(t)
    log.info("built %d tracks", len(tracks))

    use_video = video if params.use_medianflow else None
    tracks = replace_after_build(tracks, use_video, kcfg, mcfg)
    check_deadline(deadline)
    if params.use_joining:
        tracks = join_tracks(tracks, params, kcfg)
        check_deadline(deadline)
    tracks = filter_tracks(tracks, params)
    tracks = trim_tracks(tracks, dims, params)
    # trimming changes overlaps, so re-check redundancy
    tracks = remove_redundant(tracks, params)
    return sorted(tracks, key=lambda t: t.id)
