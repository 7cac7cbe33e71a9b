"""Robust confidence tracking: greedy, confidence-ranked multi-object tracking."""
from .build import (
    SeedQueue,
    TrackBuilder,
    TrackingTimeout,
    accept_candidate,
    moving_forward,
    score_candidate,
    seed_order,
    select_seed,
    smooth_track,
)
from .pipeline import run_rct
from .post import (
    average_iou,
    can_join,
    filter_tracks,
    join_tracks,
    merge_tracks,
    remove_redundant,
    replace_after_build,
    trim_track,
    trim_tracks,
)
from .types import TRIM_MODES, RctParams, Source, Track, TrackBox

__all__ = [
    "RctParams", "Source", "Track", "TrackBox", "TRIM_MODES", "TrackingTimeout", "run_rct",
    "SeedQueue", "TrackBuilder", "accept_candidate", "moving_forward", "score_candidate", "seed_order",
    "select_seed", "smooth_track", "average_iou", "can_join", "filter_tracks", "join_tracks",
    "merge_tracks", "remove_redundant", "replace_after_build", "trim_track", "trim_tracks",
]
