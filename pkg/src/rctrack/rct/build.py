"""Greedy, confidence-ranked construction of single tracks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import kalman
from ..detections import DetectionPool
from ..geometry import Box, FrameDims, center, contains_point, enlarge, is_onscreen, offscreen_score, overlaps
from ..kalman import KalmanConfig, KalmanState
from ..medianflow import MedianFlowConfig, track_box
from .smoothing import smooth_observations
from .types import RctParams, Source, Track, TrackBox


class TrackingTimeout(RuntimeError):
    """Raised when the cooperative deadline of a tracking run passes."""


def check_deadline(deadline: float | None) -> None:
    import time

    if deadline is not None and time.monotonic() > deadline:
        raise TrackingTimeout("tracking deadline exceeded")


# --------------------------------------------------------------------------- seeds


def seed_order(pool: DetectionPool) -> np.ndarray:
    """Detection ids by descending confidence; ties by earliest frame, then x, then y."""
    if len(pool) == 0:
        return np.empty(0, dtype=np.intp)
    return np.lexsort((pool.xywh[:, 1], pool.xywh[:, 0], pool.frames, -pool.conf))


class SeedQueue:
    """Incremental seed selection.

    Exclusions only ever grow (detections get consumed, tracks get added), so
    a skipped detection never needs to be revisited.
    """

    def __init__(self, pool: DetectionPool, params: RctParams, dims: FrameDims, tracks=()):
        self.pool, self.params, self.dims = pool, params, dims
        self.order = seed_order(pool)
        self.pos = 0
        self.occupied: dict[int, list[Box]] = {}
        for t in tracks:
            self.add_track(t)

    def add_track(self, track: Track) -> None:
        for f, tb in track.boxes.items():
            if tb.box is not None:
                self.occupied.setdefault(f, []).append(tb.box)

    def _allowed(self, i: int) -> bool:
        b = self.pool.box(i)
        if not is_onscreen(enlarge(b, self.params.beta), self.dims):
            return False
        return not any(overlaps(b, o) for o in self.occupied.get(int(self.pool.frames[i]), ()))

    def next(self) -> int | None:
        pool = self.pool
        while self.pos < len(self.order):
            i = int(self.order[self.pos])
            if pool.conf[i] < self.params.h_I:
                return None
            self.pos += 1
            if pool.consumed[i] or not self._allowed(i):
                continue
            return i
        return None


def select_seed(pool: DetectionPool, tracks, params: RctParams, dims: FrameDims) -> int | None:
    """Highest-confidence usable seed detection id, or None.

    Skips consumed detections, detections overlapping an existing track's box
    on their frame, and detections whose ``beta``-enlarged box leaves the
    frame. Returns None once the best remaining confidence is below ``h_I``.
    """
    return SeedQueue(pool, params, dims, tracks).next()


# ----------------------------------------------------------------- per-frame tests


def score_candidate(confidence: float, box: Box, s: KalmanState, cfg: KalmanConfig) -> float:
    """Joint score: detection confidence times motion likelihood."""
    if confidence <= 0:
        return 0.0
    return confidence * kalman.likelihood(s, box, cfg)


def log_score(confidence: float, box: Box, s: KalmanState, cfg: KalmanConfig) -> float:
    if confidence <= 0:
        return -math.inf
    return math.log(confidence) + kalman.log_likelihood(s, box, cfg)


def moving_forward(box: Box, s_now: KalmanState, s_prev: KalmanState, cfg: KalmanConfig, steps: int = 1) -> bool:
    """Direction test: ``box`` is at least as likely under the predicted state
    as under the same prediction with the velocity reversed. ``s_now`` is
    ``s_prev`` predicted ``steps`` frames ahead.

    Both hypotheses share the predicted covariance, so only the direction of
    motion decides. A state with zero velocity always passes.
    """
    rev = s_prev.mean.copy()
    rev[0] -= steps * rev[2]
    rev[1] -= steps * rev[3]
    s_rev = KalmanState(rev, s_now.cov)
    return kalman.log_likelihood(s_now, box, cfg) >= kalman.log_likelihood(s_rev, box, cfg)


def accept_candidate(box: Box, s_now: KalmanState, s_prev: KalmanState, cfg: KalmanConfig) -> bool:
    """Plausibility of extending a track with ``box``.

    ``s_now`` is the prediction for the candidate's frame and ``s_prev`` the
    belief on the previous frame. The candidate center must lie in the
    predicted box, and the candidate must not indicate motion against the
    estimated velocity.
    """
    if not contains_point(s_now.box(), center(box)):
        return False
    return moving_forward(box, s_now, s_prev, cfg)


# ------------------------------------------------------------------ track growth


@dataclass
class _Proposal:
    frame: int
    source: Source
    box: Box | None = None
    det_id: int | None = None
    confidence: float = 0.0
    log_score: float = -math.inf
    # frames retroactively switched to MedianFlow boxes
    backfill: dict[int, Box] = field(default_factory=dict)
    state_box: Box | None = None


class _SotChain:
    """Lazily advanced MedianFlow track anchored at the latest trusted box."""

    def __init__(self, video, step: int, cfg: MedianFlowConfig):
        self.video, self.step, self.cfg = video, step, cfg
        self.anchor: int | None = None
        self.boxes: dict[int, Box] = {}
        self.failed_at: int | None = None

    def reset(self, frame: int, box: Box) -> None:
        self.anchor = frame
        self.boxes = {frame: box}
        self.failed_at = None

    def box(self, frame: int) -> Box | None:
        if self.video is None or self.anchor is None:
            return None
        if frame in self.boxes:
            return self.boxes[frame]
        if self.failed_at is not None and (frame - self.failed_at) * self.step >= 0:
            return None
        f = max(self.boxes, key=lambda k: k * self.step)
        while (frame - f) * self.step > 0:
            nxt = f + self.step
            if not 1 <= nxt <= self.video.num_frames:
                self.failed_at = nxt
                return None
            m = track_box(self.video.pyramid(f), self.video.pyramid(nxt), self.boxes[f], self.cfg)
            if m is None:
                self.failed_at = nxt
                return None
            self.boxes[nxt] = m
            f = nxt
        return self.boxes.get(frame)


class _Direction:
    """Growth state for one temporal direction (+1 forward, -1 backward)."""

    def __init__(self, step: int, state: KalmanState, frame: int, last_box: Box, sot: _SotChain):
        self.step = step
        self.state = state  # belief on self.frame, in this direction's time
        self.frame = frame
        self.last_box = last_box
        self.sot = sot
        self.done = False
        # posterior per frame, kept so MedianFlow backfills can re-run the filter
        self.history: dict[int, KalmanState] = {frame: state}


class TrackBuilder:
    """Builds one track from a seed detection (bidirectional growth, then
    forward, then backward), followed by the final smoothing pass."""

    def __init__(self, pool: DetectionPool, video, params: RctParams, dims: FrameDims, num_frames: int,
                 kcfg: KalmanConfig, mcfg: MedianFlowConfig, deadline: float | None = None):
        self.pool, self.video, self.params, self.dims = pool, video, params, dims
        self.num_frames = num_frames
        self.kcfg, self.mcfg = kcfg, mcfg
        self.deadline = deadline
        self.use_sot = params.use_medianflow and video is not None
        self.obs: dict[int, TrackBox] = {}

    # -- helpers ---------------------------------------------------------------

    def _has_detection(self, frame: int) -> bool:
        tb = self.obs.get(frame)
        return tb is not None and tb.source is Source.DETECTION

    def _propose(self, d: _Direction) -> _Proposal | None:
        f = d.frame + d.step
        if not 1 <= f <= self.num_frames:
            return None
        k = self.kcfg
        s_now = kalman.predict(d.state, k)
        kbox = s_now.box()
        prop = _Proposal(frame=f, source=Source.MISSING, state_box=kbox)

        ids = self.pool.overlapping(self.pool.unconsumed_on_frame(f), kbox)
        best, best_score = None, -math.inf
        for i in ids:
            i = int(i)
            sc = log_score(float(self.pool.conf[i]), self.pool.box(i), s_now, k)
            if sc > best_score:
                best, best_score = i, sc
        accepted = best is not None and best_score > -math.inf and accept_candidate(
            self.pool.box(best), s_now, d.state, k
        )
        prev_tb = self.obs.get(d.frame)
        if accepted:
            det_box = self.pool.box(best)
            if self.use_sot and prev_tb is not None and prev_tb.source is Source.SOT:
                m = d.sot.box(f)
                if (m is not None and contains_point(kbox, center(m))
                        and not (contains_point(m, center(det_box)) and contains_point(det_box, center(m)))):
                    # detection diverges from the MedianFlow track: likely spurious
                    prop.source, prop.box = Source.SOT, m
                    return prop
            prop.source, prop.box, prop.det_id = Source.DETECTION, det_box, best
            prop.confidence = float(self.pool.conf[best])
            prop.log_score = best_score
            return prop

        if self.use_sot:
            dm = self.params.delta_m
            window = [f - j * d.step for j in range(1, dm + 1)]
            if all(g in self.obs and not self._has_detection(g) for g in window):
                m = d.sot.box(f)
                if m is not None and contains_point(kbox, center(m)):
                    prop.source, prop.box = Source.SOT, m
                    for g in window:
                        if self.obs[g].source is Source.MISSING:
                            mg = d.sot.box(g)
                            if mg is not None:
                                prop.backfill[g] = mg
        return prop

    def _stops(self, d: _Direction, prop: _Proposal) -> bool:
        if self.params.trim_mode == "no_offscreen":
            return False
        cur = prop.box if prop.box is not None else prop.state_box
        return offscreen_score(cur, self.dims) > offscreen_score(d.last_box, self.dims)

    def _commit(self, d: _Direction, prop: _Proposal) -> None:
        k = self.kcfg
        if prop.backfill:
            for g, m in prop.backfill.items():
                self.obs[g] = TrackBox(g, None, Source.SOT, obs=m)
            # re-run this direction's filter over the backfilled frames
            first = min(prop.backfill, key=lambda g: g * d.step)
            s = d.history[first - d.step]
            g = first
            while (g - d.frame) * d.step <= 0:
                s = kalman.update(kalman.predict(s, k), self.obs[g].obs, k)
                d.history[g] = s
                g += d.step
            d.state = s
        s_pred = kalman.predict(d.state, k)
        if prop.source is Source.DETECTION:
            self.pool.consume(prop.det_id)
            self.obs[prop.frame] = TrackBox(prop.frame, None, Source.DETECTION, prop.confidence, prop.det_id, prop.box)
            d.sot.reset(prop.frame, prop.box)
        elif prop.source is Source.SOT:
            self.obs[prop.frame] = TrackBox(prop.frame, None, Source.SOT, obs=prop.box)
        else:
            self.obs[prop.frame] = TrackBox(prop.frame, None, Source.MISSING)
        d.state = kalman.update(s_pred, prop.box, k)
        d.history[prop.frame] = d.state
        d.frame = prop.frame
        d.last_box = prop.box if prop.box is not None else prop.state_box

    def _advance(self, d: _Direction) -> _Proposal | None:
        """Propose the next step of ``d``; marks ``d`` done when it must stop."""
        if d.done:
            return None
        prop = self._propose(d)
        if prop is None or self._stops(d, prop):
            d.done = True
            return None
        return prop

    def _refilter(self, step: int, frames: list[int], sot: _SotChain) -> _Direction:
        """Run a filter over committed frames in the given time direction."""
        k = self.kcfg
        ordered = sorted(frames, key=lambda g: g * step)
        first_obs = next(g for g in ordered if self.obs[g].obs is not None)
        s = kalman.init(self.obs[first_obs].obs, k)
        if step < 0:
            s = s.reversed()
        history = {}
        started = False
        for g in ordered:
            if g == first_obs:
                started = True
                s = kalman.update(s, self.obs[g].obs, k)
            elif started:
                s = kalman.update(kalman.predict(s, k), self.obs[g].obs, k)
            else:
                continue
            history[g] = s
        last = ordered[-1]
        d = _Direction(step, history[last], last, self._frame_box(last, history[last]), sot)
        d.history = history
        anchor = next((g for g in reversed(ordered) if self.obs[g].obs is not None), None)
        if anchor is not None:
            sot.reset(anchor, self.obs[anchor].obs)
            for g in ordered:
                if (g - anchor) * step > 0 and self.obs[g].source is Source.SOT:
                    sot.boxes[g] = self.obs[g].obs
        return d

    def _frame_box(self, frame: int, state: KalmanState) -> Box:
        tb = self.obs[frame]
        return tb.obs if tb.obs is not None else state.box()

    def _grow(self, d: _Direction) -> None:
        n = 0
        while True:
            prop = self._advance(d)
            if prop is None:
                return
            self._commit(d, prop)
            n += 1
            if n % 64 == 0:
                check_deadline(self.deadline)

    # -- main entry --------------------------------------------------------------

    def build(self, seed: int, track_id: int) -> Track:
        pool, k = self.pool, self.kcfg
        f0 = int(pool.frames[seed])
        seed_box = pool.box(seed)
        conf = float(pool.conf[seed])
        pool.consume(seed)
        self.obs = {f0: TrackBox(f0, None, Source.DETECTION, conf, seed, seed_box)}
        s0 = kalman.update(kalman.init(seed_box, k), seed_box, k)

        fwd = _Direction(+1, s0, f0, seed_box, _SotChain(self.video if self.use_sot else None, +1, self.mcfg))
        bwd = _Direction(-1, s0.reversed(), f0, seed_box, _SotChain(self.video if self.use_sot else None, -1, self.mcfg))
        fwd.sot.reset(f0, seed_box)
        bwd.sot.reset(f0, seed_box)

        # Bidirectional phase: the better-scoring direction commits each step.
        for _ in range(self.params.delta):
            props = [(d, self._advance(d)) for d in (fwd, bwd)]
            props = [(d, p) for d, p in props if p is not None]
            if not props:
                break
            best_d, best_p = max(props, key=lambda dp: dp[1].log_score)
            if best_p.log_score > -math.inf:
                self._commit(best_d, best_p)
            else:
                for d, p in props:
                    self._commit(d, p)

        committed = sorted(self.obs)
        # Forward, using every committed frame as context.
        if not fwd.done:
            fwd = self._refilter(+1, committed, fwd.sot)
            self._grow(fwd)
        # Backward, with context up to delta frames past the seed.
        if not bwd.done:
            ctx = [g for g in sorted(self.obs) if g < f0 + max(self.params.delta, 1)]
            bwd = self._refilter(-1, ctx, bwd.sot)
            self._grow(bwd)

        track = Track(track_id, f0, conf)
        track.boxes = self.obs
        smooth_track(track, self.kcfg, split=(f0, self.params.delta))
        return track


def smooth_track(track: Track, cfg: KalmanConfig, split: tuple[int, int] | None = None) -> None:
    """Replace every box by the smoothed state box; MISSING becomes MOTION.

    With ``split=(f_seed, delta)`` the frames before ``f_seed + delta`` and
    the frames after ``f_seed - delta`` are smoothed separately, the overlap
    serving as context: frames before the seed take the first pass, the rest
    the second.
    """
    frames = track.frames
    a, b = frames[0], frames[-1]
    obs = {f: track.boxes[f].obs if track.boxes[f].observed else None for f in frames}
    if split is None:
        states = smooth_observations(obs, a, b, cfg)
    else:
        f0, delta = split
        delta = max(delta, 1)
        states = {}
        if a < f0:
            lo = smooth_observations(obs, a, min(b, f0 + delta - 1), cfg)
            states.update({f: s for f, s in lo.items() if f < f0})
        hi = smooth_observations(obs, max(a, f0 - delta + 1), b, cfg)
        states.update({f: s for f, s in hi.items() if f >= f0})
    for f in frames:
        tb = track.boxes[f]
        tb.box = states[f].box()
        if not tb.observed:
            tb.source = Source.MOTION
            tb.obs = None
    track.kalman_states = states
