"""Post-build stages: MedianFlow replacement, joining, filtering, trimming."""
from __future__ import annotations

import logging
import math

import numpy as np

from .. import kalman
from ..geometry import Box, FrameDims, center, iou, is_onscreen, offscreen_fraction, overlaps
from ..kalman import KalmanConfig, KalmanState
from ..medianflow import MedianFlowConfig, track_box
from .build import moving_forward, smooth_track
from .types import RctParams, Source, Track, TrackBox

log = logging.getLogger(__name__)

_PRIORITY = {Source.DETECTION: 2, Source.SOT: 1, Source.MOTION: 0, Source.MISSING: 0}


# ------------------------------------------------------------------- replacement


def replace_after_build(tracks: list[Track], video, kcfg: KalmanConfig,
                        mcfg: MedianFlowConfig = MedianFlowConfig()) -> list[Track]:
    """Swap doubtful interior boxes for MedianFlow boxes.

    A box is doubtful when it was inferred by the motion model or when it
    overlaps another track's detection on that frame. It becomes a MedianFlow
    box when the tracker succeeds and its box overlaps the track's previous
    box; otherwise it becomes a missing observation. Tracks are re-smoothed.
    """
    if video is None:
        return tracks
    dets: dict[int, list[tuple[int, Box]]] = {}
    for t in tracks:
        for f, tb in t.boxes.items():
            if tb.source is Source.DETECTION:
                dets.setdefault(f, []).append((t.id, tb.obs))

    for t in tracks:
        seen = t.observed_frames()
        if len(seen) < 2:
            continue
        changed = False
        prev_box = t.boxes[seen[0]].box
        for f in range(seen[0] + 1, seen[-1] + 1):
            tb = t.boxes[f]
            doubtful = tb.source is Source.MOTION or any(
                w != t.id and overlaps(tb.box, b) for w, b in dets.get(f, ())
            )
            if not doubtful:
                prev_box = tb.box
                continue
            m = track_box(video.pyramid(f - 1), video.pyramid(f), prev_box, mcfg)
            changed = True
            if m is not None and overlaps(m, prev_box):
                t.boxes[f] = TrackBox(f, m, Source.SOT, obs=m)
                prev_box = m
            else:
                t.boxes[f] = TrackBox(f, tb.box, Source.MISSING)
                prev_box = tb.box
        if changed and t.observed_frames():
            smooth_track(t, kcfg)
    return [t for t in tracks if t.observed_frames()]


# ----------------------------------------------------------------------- joining


def _v_max(*tracks: Track) -> float:
    return max((s.speed for t in tracks for s in t.kalman_states.values()), default=0.0)


def _filter_states(t: Track, frames: list[int], cfg: KalmanConfig, reverse: bool = False) -> KalmanState:
    """Filtered belief at the end of ``frames`` (in the given time direction)."""
    seq = sorted(frames, reverse=reverse)
    first = next(f for f in seq if t.boxes[f].observed)
    s = kalman.init(t.boxes[first].obs, cfg)
    started = False
    for f in seq:
        if f == first:
            started = True
            s = kalman.update(s, t.boxes[f].obs, cfg)
        elif started:
            s = kalman.update(kalman.predict(s, cfg), t.boxes[f].obs if t.boxes[f].observed else None, cfg)
    return s


def _ahead(s: KalmanState, steps: int, cfg: KalmanConfig) -> KalmanState:
    for _ in range(steps):
        s = kalman.predict(s, cfg)
    return s


def join_gap(j: Track, w: Track, params: RctParams) -> int | None:
    """Temporal distance for appending ``w`` to ``j``, or None when not joinable on time."""
    oj, ow = j.observed_frames(), w.observed_frames()
    if not oj or not ow:
        return None
    f_j, f_w = oj[-1], ow[0]
    if f_j <= f_w:
        gap = f_w - f_j
        return gap if gap < params.d_max else None
    both = [f for f in set(j.boxes) & set(w.boxes)
            if j.boxes[f].source is Source.DETECTION and w.boxes[f].source is Source.DETECTION]
    if not both:
        return None
    low = 0
    for f in both:
        if iou(j.boxes[f].obs, w.boxes[f].obs) < params.h_u:
            low += 1
            if low > 2:
                return None
    return None if low == len(both) else 0


def can_join(j: Track, w: Track, params: RctParams, cfg: KalmanConfig) -> int | None:
    """D_time when ``w`` may be appended to ``j``, else None."""
    gap = join_gap(j, w, params)
    if gap is None:
        return None
    if gap == 0:
        return 0
    oj, ow = j.observed_frames(), w.observed_frames()
    f_j, f_w = oj[-1], ow[0]
    bj, bw = j.boxes[f_j].obs, w.boxes[f_w].obs
    (xj, yj), (xw, yw) = center(bj), center(bw)
    if math.hypot(xw - xj, yw - yj) > gap * _v_max(j, w):
        return None
    # j carried forward must find w ahead of it ...
    sj = _filter_states(j, [f for f in j.frames if f <= f_j], cfg)
    if not moving_forward(bw, _ahead(sj, gap, cfg), sj, cfg, steps=gap):
        return None
    # ... and w carried back in time must find j behind it.
    sw = _filter_states(w, [f for f in w.frames if f >= f_w], cfg, reverse=True)
    if not moving_forward(bj, _ahead(sw, gap, cfg), sw, cfg, steps=gap):
        return None
    return gap


def merge_tracks(j: Track, w: Track, cfg: KalmanConfig) -> Track:
    """Append ``w`` to ``j``; ``j``'s inferred tail and ``w``'s inferred head are dropped."""
    f_j, f_w = j.observed_frames()[-1], w.observed_frames()[0]
    boxes: dict[int, TrackBox] = {}
    for f, tb in j.boxes.items():
        if f <= f_j or tb.observed:
            boxes[f] = tb
    for f, tb in w.boxes.items():
        if f < f_w and not tb.observed:
            continue
        cur = boxes.get(f)
        if cur is None or (_PRIORITY[tb.source], tb.confidence) > (_PRIORITY[cur.source], cur.confidence):
            boxes[f] = tb
    for f in range(min(boxes), max(boxes) + 1):
        if f not in boxes:
            boxes[f] = TrackBox(f, None, Source.MISSING)
    hi, lo = (j, w) if j.init_confidence >= w.init_confidence else (w, j)
    t = Track(min(j.id, w.id), hi.init_frame, hi.init_confidence, boxes)
    smooth_track(t, cfg)
    return t


def join_tracks(tracks: list[Track], params: RctParams, cfg: KalmanConfig) -> list[Track]:
    """Greedily join fragments, closest in time first, until no pair qualifies."""
    tracks = list(tracks)
    # A pair's verdict only depends on its two tracks, and merging replaces
    # both, so verdicts are cached. Retired tracks stay referenced so their
    # ids are not recycled while the cache lives.
    verdicts: dict[tuple[int, int], int | None] = {}
    spans: dict[int, tuple[int, int]] = {}
    retired: list[Track] = []

    def span(t: Track) -> tuple[int, int]:
        if id(t) not in spans:
            seen = t.observed_frames()
            spans[id(t)] = (seen[0], seen[-1]) if seen else (0, -1)
        return spans[id(t)]

    while True:
        best = None
        for j in tracks:
            j0, j1 = span(j)
            for w in tracks:
                if j is w:
                    continue
                w0, w1 = span(w)
                # neither close enough after j nor overlapping it in time
                if j1 < j0 or w1 < w0 or w0 - j1 >= params.d_max or (w0 < j1 and max(j0, w0) > min(j1, w1)):
                    continue
                key = (id(j), id(w))
                if key not in verdicts:
                    verdicts[key] = can_join(j, w, params, cfg)
                gap = verdicts[key]
                if gap is None:
                    continue
                key = (gap, j.id, w.id)
                if best is None or key < best[0]:
                    best = (key, j, w)
        if best is None:
            return sorted(tracks, key=lambda t: t.id)
        _, j, w = best
        log.debug("joining track %d and track %d", j.id, w.id)
        retired += [j, w]
        tracks = [t for t in tracks if t is not j and t is not w] + [merge_tracks(j, w, cfg)]


# --------------------------------------------------------------------- filtering


def average_iou(a: Track, b: Track) -> float:
    common = set(a.boxes) & set(b.boxes)
    if not common:
        return 0.0
    return float(np.mean([iou(a.boxes[f].box, b.boxes[f].box) for f in common]))


def remove_redundant(tracks: list[Track], params: RctParams) -> list[Track]:
    """Drop the lower-confidence member of every pair with average IoU > h_f."""
    pairs = []
    for i, a in enumerate(tracks):
        for b in tracks[i + 1:]:
            v = average_iou(a, b)
            if v > params.h_f:
                pairs.append((-v, a.id, b.id, a, b))
    pairs.sort(key=lambda p: p[:3])
    gone: set[int] = set()
    for _, _, _, a, b in pairs:
        if a.id in gone or b.id in gone:
            continue
        loser = b if (a.init_confidence, -a.id) >= (b.init_confidence, -b.id) else a
        gone.add(loser.id)
    return [t for t in tracks if t.id not in gone]


def filter_tracks(tracks: list[Track], params: RctParams) -> list[Track]:
    """Size-outlier removal for low-confidence tracks, then redundancy removal."""
    tracks = list(tracks)
    if params.use_size_filter and tracks:
        sizes = np.array([t.size() for t in tracks])
        mean = sizes.mean()
        big = [s for t, s in zip(tracks, sizes) if t.init_confidence > params.h_q and s >= mean]
        if big:
            cut = np.mean(big) + 1.645 * np.std(big)
            tracks = [t for t, s in zip(tracks, sizes) if not (s > cut and t.init_confidence < params.h_q)]
    return remove_redundant(tracks, params)


# ---------------------------------------------------------------------- trimming


def _end_runs(t: Track) -> tuple[list[int], list[int]]:
    """Inferred frames before the first and after the last observed frame."""
    seen = t.observed_frames()
    fr = t.frames
    if not seen:
        return fr, []
    return [f for f in fr if f < seen[0]], [f for f in fr if f > seen[-1]]


def _accelerate(t: Track, run: list[int], anchor: int, step: int, dims: FrameDims, alpha: float) -> None:
    """Push inferred boxes offscreen faster once they start leaving the frame."""
    s = t.kalman_states.get(anchor)
    if s is None or not run:
        return
    vx, vy = s.velocity
    vx, vy = step * vx, step * vy
    ordered = sorted(run, key=lambda f: f * step)
    prev = t.boxes[anchor].box
    gain = 1.0
    exiting = any(v > 0 for v in offscreen_fraction(prev, dims))
    for f in ordered:
        tb = t.boxes[f]
        if not exiting and any(v > 0 for v in offscreen_fraction(tb.box, dims)):
            exiting = True
        if exiting:
            gain *= alpha
            cx, cy = center(prev)
            tb.box = Box.from_center(cx + gain * vx, cy + gain * vy, tb.box.w, tb.box.h)
        prev = tb.box


def _cut(t: Track, frames: list[int]) -> None:
    for f in frames:
        del t.boxes[f]


def trim_track(t: Track, dims: FrameDims, params: RctParams) -> Track | None:
    mode = params.trim_mode
    if mode != "no_offscreen":
        head, tail = _end_runs(t)
        seen = t.observed_frames()
        if seen:
            _accelerate(t, tail, seen[-1], +1, dims, params.alpha)
            _accelerate(t, head, seen[0], -1, dims, params.alpha)
        limit = params.omega / 100.0

        def out(b: Box) -> bool:
            fw, fh = offscreen_fraction(b, dims)
            if mode == "touch":
                return fw > 0 or fh > 0
            return fw > limit and fh > limit

        for fr in (t.frames, t.frames[::-1]):
            for f in fr:
                if not out(t.boxes[f].box):
                    break
                del t.boxes[f]
        if not t.boxes:
            return None

    if mode != "no_onscreen":
        head, tail = _end_runs(t)
        for run in (head, tail):
            if run and sum(is_onscreen(t.boxes[f].box, dims) for f in run) >= params.delta_n:
                _cut(t, run)
    t.kalman_states = {f: s for f, s in t.kalman_states.items() if f in t.boxes}
    return t if t.boxes else None


def trim_tracks(tracks: list[Track], dims: FrameDims, params: RctParams) -> list[Track]:
    out = []
    for t in tracks:
        r = trim_track(t, dims, params)
        if r is not None:
            out.append(r)
    return out
