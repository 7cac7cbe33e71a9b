import math

import numpy as np
import pytest

from rctrack import kalman, synth
from rctrack.detections import Detection, DetectionPool
from rctrack.geometry import Box, FrameDims, center, iou
from rctrack.kalman import KalmanConfig, KalmanState
from rctrack.rct import (
    RctParams,
    Source,
    Track,
    TrackBox,
    accept_candidate,
    average_iou,
    filter_tracks,
    join_tracks,
    replace_after_build,
    run_rct,
    score_candidate,
    select_seed,
    smooth_track,
    trim_track,
)

DIMS = FrameDims(640, 480)
KCFG = KalmanConfig()


def _linear(frames, x0=100.0, y0=200.0, vx=4.0, vy=0.0, w=40.0, h=40.0, conf=0.9):
    return [Detection(f, Box(x0 + vx * (f - 1), y0 + vy * (f - 1), w, h), conf) for f in frames]


def _track(tid, boxes: dict, conf=0.9, init_conf=None, missing=()):
    """Finalized track from per-frame observed boxes, MISSING on ``missing``."""
    t = Track(tid, min(boxes), conf if init_conf is None else init_conf)
    for f, b in boxes.items():
        t.boxes[f] = TrackBox(f, b, Source.DETECTION, conf, obs=b)
    for f in missing:
        t.boxes[f] = TrackBox(f, None, Source.MISSING)
    smooth_track(t, KCFG)
    return t


def _state(mean, cov=None):
    return KalmanState(np.array(mean, dtype=float), np.eye(6) if cov is None else cov)


# ------------------------------------------------------------------ params


def test_default_params():
    p = RctParams()
    assert (p.h_I, p.beta, p.delta, p.delta_m, p.h_u, p.d_max) == (0.5, 50, 4, 2, 0.3, 20)
    assert (p.h_q, p.h_f, p.omega, p.alpha, p.delta_n) == (0.8, 0.2, 1, 1.1, 5)


@pytest.mark.parametrize("kw", [{"h_I": 1.5}, {"h_f": -0.1}, {"alpha": 0.9}, {"delta": -1},
                                {"beta": -5}, {"trim_mode": "sideways"}])
def test_params_reject_out_of_range(kw):
    with pytest.raises(ValueError):
        RctParams(**kw)


# --------------------------------------------------------------- seed choice


def test_select_seed_picks_max_confidence():
    pool = DetectionPool([Detection(3, Box(300, 220, 40, 40), 0.9), Detection(1, Box(300, 220, 40, 40), 0.7)])
    assert select_seed(pool, [], RctParams(), DIMS) == 0


def test_select_seed_skips_edge_hugging_detection():
    pool = DetectionPool([Detection(1, Box(0, 220, 40, 40), 0.95), Detection(1, Box(300, 220, 40, 40), 0.6)])
    assert select_seed(pool, [], RctParams(), DIMS) == 1


def test_select_seed_none_below_threshold():
    pool = DetectionPool([Detection(1, Box(300, 220, 40, 40), 0.49), Detection(2, Box(100, 100, 40, 40), 0.2)])
    assert select_seed(pool, [], RctParams(), DIMS) is None


def test_select_seed_skips_consumed_and_overlapping():
    pool = DetectionPool([Detection(1, Box(300, 220, 40, 40), 0.9), Detection(1, Box(310, 225, 40, 40), 0.8),
                          Detection(2, Box(100, 100, 40, 40), 0.7)])
    t = _track(1, {1: Box(300, 220, 40, 40)})
    pool.consume(0)
    assert select_seed(pool, [t], RctParams(), DIMS) == 2


def test_select_seed_tie_break_earliest_frame_then_position():
    pool = DetectionPool([Detection(2, Box(100, 100, 40, 40), 0.8), Detection(1, Box(300, 100, 40, 40), 0.8),
                          Detection(1, Box(200, 100, 40, 40), 0.8)])
    assert select_seed(pool, [], RctParams(), DIMS) == 2


# ------------------------------------------------------------------- scoring


def test_score_zero_confidence():
    s = kalman.init(Box(100, 100, 40, 40), KCFG)
    assert score_candidate(0.0, Box(100, 100, 40, 40), s, KCFG) == 0.0


def test_score_linear_in_confidence():
    s = kalman.predict(kalman.init(Box(100, 100, 40, 40), KCFG), KCFG)
    b = Box(102, 101, 40, 40)
    assert score_candidate(0.8, b, s, KCFG) / score_candidate(0.4, b, s, KCFG) == pytest.approx(2.0, rel=1e-12)


def test_score_prefers_likely_position_over_confidence():
    s = kalman.predict(kalman.init(Box(100, 100, 40, 40), KCFG), KCFG)
    H = kalman.observation_matrix()
    S = H @ s.cov @ H.T + KCFG.observation_cov
    near = s.box()
    far = Box(near.x + 3 * math.sqrt(S[0, 0]), near.y, near.w, near.h)
    assert math.exp(-4.5) < 0.5
    assert score_candidate(0.5, near, s, KCFG) > score_candidate(1.0, far, s, KCFG)
    assert score_candidate(1.0, far, s, KCFG) / score_candidate(1.0, near, s, KCFG) == pytest.approx(
        math.exp(-4.5), rel=1e-9)


def test_accept_centered_candidate():
    prev = _state([120, 120, 5, 0, 40, 40])
    now = kalman.predict(prev, KCFG)
    assert accept_candidate(now.box(), now, prev, KCFG)


def test_reject_center_outside_prediction():
    prev = _state([120, 120, 5, 0, 40, 40])
    now = kalman.predict(prev, KCFG)
    assert not accept_candidate(Box.from_center(160, 120, 40, 40), now, prev, KCFG)


def test_reject_backward_motion():
    prev = _state([100, 100, 5, 0, 40, 40])
    now = kalman.predict(prev, KCFG)
    # inside the predicted box but nearer where the object came from
    assert not accept_candidate(Box.from_center(98, 100, 40, 40), now, prev, KCFG)


# ------------------------------------------------------------------- growth


def test_single_detection_track():
    pool = DetectionPool([Detection(5, Box(300, 220, 40, 40), 0.9)])
    tracks = run_rct(pool, None, RctParams(use_medianflow=False), DIMS, 10)
    assert len(tracks) == 1 and 5 in tracks[0].boxes and tracks[0].is_contiguous()


def test_dense_constant_velocity_track():
    dets = _linear(range(1, 31))
    tracks = run_rct(DetectionPool(dets), None, RctParams(use_medianflow=False), DIMS, 30)
    (t,) = tracks
    assert t.frames == list(range(1, 31))
    assert all(tb.source is Source.DETECTION for tb in t.boxes.values())
    err = max(math.dist(center(t.boxes[d.frame].box), center(d.box)) for d in dets)
    assert err < 2.0


def test_gap_filled_by_motion_without_sot():
    dets = _linear([*range(1, 11), *range(16, 31)])
    (t,) = run_rct(DetectionPool(dets), None, RctParams(use_medianflow=False), DIMS, 30)
    assert t.frames == list(range(1, 31))
    assert [t.boxes[f].source for f in range(11, 16)] == [Source.MOTION] * 5
    for f in range(11, 16):
        truth = Box(100 + 4 * (f - 1), 200, 40, 40)
        assert math.dist(center(t.boxes[f].box), center(truth)) < 2.0


def test_short_gap_bridged_by_motion():
    dets = _linear([*range(1, 11), *range(13, 21)])
    (t,) = run_rct(DetectionPool(dets), None, RctParams(use_medianflow=False), DIMS, 20)
    assert t.is_contiguous() and {t.boxes[11].source, t.boxes[12].source} == {Source.MOTION}


# ---------------------------------------------------------------- SOT fallback


@pytest.fixture(scope="module")
def sinusoid():
    return synth.generate(synth.sinusoid_gap(0))


def test_sot_fills_detection_gap(sinusoid):
    tracks = run_rct(sinusoid.pool, sinusoid.video, RctParams())
    (t,) = tracks
    assert all(t.boxes[f].source is Source.SOT for f in range(41, 51))


def test_sot_failure_leaves_motion():
    # a flat object on a flat background gives optical flow nothing to follow
    r = synth.generate(synth.fragmentation(0))
    tracks = run_rct(r.pool, r.video, RctParams())
    gap = [tb.source for t in tracks for f, tb in t.boxes.items() if 30 <= f <= 41]
    assert gap and Source.SOT not in gap


def test_spurious_detection_rejected_while_on_sot(sinusoid):
    r = sinusoid
    g = r.gt[45][1]
    cx, cy = center(g)
    spurious = Detection(45, Box.from_center(cx + 12, cy + 12, 6, 6), 0.9)
    pool = DetectionPool([*r.pool.detections, spurious])
    (t,) = run_rct(pool, r.video, RctParams())
    assert t.boxes[45].source is Source.SOT
    assert not pool.consumed[len(pool) - 1]


# ---------------------------------------------------------------- replacement


def test_replace_leaves_clean_tracks_alone(sinusoid):
    a = _track(1, {f: Box(100 + 3 * f, 100, 40, 40) for f in range(1, 11)})
    b = _track(2, {f: Box(400, 300 - 2 * f, 40, 40) for f in range(1, 11)})
    before = [{f: tb.box for f, tb in t.boxes.items()} for t in (a, b)]
    out = replace_after_build([a, b], sinusoid.video, KCFG)
    assert [{f: tb.box for f, tb in t.boxes.items()} for t in out] == before


def test_replace_crossing_overlap_uses_sot():
    r = synth.generate(synth.crossing_pair(0))
    tracks = run_rct(r.pool, r.video, RctParams())
    assert len(tracks) == 2
    sot = [f for t in tracks for f, tb in t.boxes.items() if tb.source is Source.SOT]
    assert sot
    # every replaced box sits on a frame where the two tracks overlap or had no detection
    for t in tracks:
        other = next(o for o in tracks if o is not t)
        for f, tb in t.boxes.items():
            if tb.source is Source.SOT and f in other.boxes:
                assert iou(tb.box, other.boxes[f].box) >= 0 and tb.box.is_finite()


class _JumpVideo:
    """Two-frame stand-in whose flow result is far from the previous box."""


def test_replace_disjoint_flow_becomes_missing(monkeypatch, sinusoid):
    from rctrack.rct import post

    monkeypatch.setattr(post, "track_box", lambda I, J, box, cfg: Box(box.x + 200, box.y, box.w, box.h))
    a = _track(1, {f: Box(100 + 3 * f, 100, 40, 40) for f in range(1, 11)})
    b = _track(2, {f: Box(103 + 3 * f, 102, 40, 40) for f in (4, 5)})
    out = replace_after_build([a, b], sinusoid.video, KCFG)
    ta = next(t for t in out if t.id == 1)
    assert ta.boxes[5].source is Source.MOTION
    assert ta.is_contiguous()


# --------------------------------------------------------------------- joining


def test_join_fragmented_object():
    a = _track(1, {f: Box(100 + 4 * f, 200, 40, 40) for f in range(1, 21)})
    # slightly slower through the gap, so the distance is within gap * v_max
    b = _track(2, {f: Box(97 + 4 * f, 200, 40, 40) for f in range(26, 51)}, conf=0.7)
    (t,) = join_tracks([a, b], RctParams(), KCFG)
    assert t.id == 1 and t.frames == list(range(1, 51))
    assert all(t.boxes[f].source is Source.MOTION for f in range(21, 26))


def test_no_join_beyond_max_gap():
    a = _track(1, {f: Box(100 + 2 * f, 200, 40, 40) for f in range(1, 21)})
    b = _track(2, {f: Box(100 + 2 * f, 200, 40, 40) for f in range(46, 60)})
    assert len(join_tracks([a, b], RctParams(), KCFG)) == 2


def test_no_join_opposite_directions():
    a = _track(1, {f: Box(100 + 3 * f, 200, 40, 40) for f in range(1, 21)})
    b = _track(2, {f: Box(175 - 3 * (f - 26), 205, 40, 40) for f in range(26, 51)})
    assert len(join_tracks([a, b], RctParams(), KCFG)) == 2


def test_join_overlapping_duplicates():
    a = _track(1, {f: Box(100 + 4 * f, 200, 40, 40) for f in range(1, 21)})
    b = _track(2, {f: Box(101 + 4 * f, 201, 40, 40) for f in range(18, 40)}, conf=0.7)
    (t,) = join_tracks([a, b], RctParams(), KCFG)
    assert t.frames == list(range(1, 40))


# ------------------------------------------------------------------- filtering


def _parked(tid, x, conf, w=40.0, n=20, y=200.0):
    return _track(tid, {f: Box(x, y, w, w) for f in range(1, n + 1)}, conf=conf)


def test_filter_keeps_high_confidence_tracks():
    tracks = [_parked(i, 60 * i, 0.9, w=20 + 15 * i) for i in range(1, 6)]
    assert len(filter_tracks(tracks, RctParams())) == 5


def test_filter_drops_huge_low_confidence_track():
    # small and medium high-confidence tracks; the medium ones reach the mean size
    small = [_parked(i, 10 + 40 * i, 0.9, w=20, y=10) for i in range(10)]
    medium = [_parked(10 + i, 10 + 80 * i, 0.9, w=60 + 2 * i, y=100) for i in range(3)]
    huge = _parked(99, 300, 0.6, w=150, y=200)
    kept = filter_tracks(small + medium + [huge], RctParams())
    assert sorted(t.id for t in kept) == list(range(13))


def test_filter_size_skipped_without_high_quality_tracks():
    tracks = [_parked(1, 50, 0.6), _parked(2, 300, 0.6, w=300)]
    assert len(filter_tracks(tracks, RctParams())) == 2


def test_filter_removes_near_duplicate():
    a = _parked(1, 100, 0.9)
    b = _track(2, {f: Box(113.3333, 200, 40, 40) for f in range(1, 21)}, conf=0.7)
    assert average_iou(a, b) == pytest.approx(0.5, abs=1e-3)
    (kept,) = filter_tracks([a, b], RctParams())
    assert kept.id == 1


# -------------------------------------------------------------------- trimming


def test_trim_leaves_onscreen_track():
    t = _parked(1, 100, 0.9)
    before = {f: tb.box for f, tb in t.boxes.items()}
    out = trim_track(t, DIMS, RctParams())
    assert {f: tb.box for f, tb in out.boxes.items()} == before


def test_trim_exiting_object():
    # visible detections only, clipped at the left edge
    dets = []
    for f in range(1, 60):
        x = 200 - 5 * (f - 1)
        if x + 40 <= 4:
            break
        x1 = max(x, 0.0)
        dets.append(Detection(f, Box(x1, 200, x + 40 - x1, 40), 0.9))
    (t,) = run_rct(DetectionPool(dets), None, RctParams(use_medianflow=False), DIMS, 80)
    # the truth is wholly offscreen from frame 49 on
    assert 45 <= t.last <= 52
    assert t.boxes[t.last].box.x2 > -40


def test_trim_long_inferred_tail():
    t = _track(1, {f: Box(300, 200, 40, 40) for f in range(1, 11)}, missing=range(11, 18))
    assert t.frames[-1] == 17
    out = trim_track(t, DIMS, RctParams())
    assert out.frames == list(range(1, 11))
    assert set(out.kalman_states) == set(out.boxes)


def test_trim_short_inferred_tail_kept():
    t = _track(1, {f: Box(300, 200, 40, 40) for f in range(1, 11)}, missing=range(11, 14))
    assert trim_track(t, DIMS, RctParams()).frames == list(range(1, 14))


# ------------------------------------------------------------------ pipeline


def test_empty_pool():
    assert run_rct(DetectionPool(), None, RctParams(), DIMS, 10) == []


def test_no_video_requires_dims():
    with pytest.raises(ValueError):
        run_rct(DetectionPool(_linear([1])), None, RctParams())


@pytest.fixture(scope="module")
def three():
    return synth.generate(synth.three_objects(0))


def test_three_objects_with_clutter(three):
    from rctrack.metrics import evaluate, tracks_to_set

    tracks = run_rct(three.pool, three.video, RctParams())
    rep = evaluate(three.gt, tracks_to_set(tracks))
    assert len(tracks) == 3 and rep.id_switches == 0
    # no track seeded on clutter
    assert all(t.init_confidence >= 0.5 for t in tracks)
    owners = {three.det_owner[i] for i in range(len(three.pool)) if three.pool.consumed[i]}
    seeds = {t.boxes[t.init_frame].det_id for t in tracks}
    assert all(three.det_owner[i] != 0 for i in seeds)
    assert owners


def test_pipeline_invariants(three):
    tracks = run_rct(three.pool, three.video, RctParams())
    det_ids = [tb.det_id for t in tracks for tb in t.boxes.values() if tb.source is Source.DETECTION]
    assert len(det_ids) == len(set(det_ids))
    assert all(three.pool.consumed[i] for i in det_ids)
    for t in tracks:
        assert t.is_contiguous()
        assert t.init_confidence >= RctParams().h_I
    for i, a in enumerate(tracks):
        for b in tracks[i + 1:]:
            assert average_iou(a, b) <= RctParams().h_f


def test_seeds_in_nonincreasing_confidence():
    dets = (_linear(range(1, 21), conf=0.7) + _linear(range(1, 21), y0=50, conf=0.95)
            + _linear(range(1, 21), y0=350, conf=0.8))
    tracks = run_rct(DetectionPool(dets), None, RctParams(use_medianflow=False), DIMS, 20)
    assert [t.init_confidence for t in tracks] == [0.95, 0.8, 0.7]


def test_determinism(three):
    a = run_rct(three.pool, three.video, RctParams())
    b = run_rct(three.pool, three.video, RctParams())
    assert [(t.id, {f: tb.box for f, tb in t.boxes.items()}) for t in a] == \
        [(t.id, {f: tb.box for f, tb in t.boxes.items()}) for t in b]


def test_low_confidence_clutter_never_seeds():
    dets = _linear(range(1, 31))
    rng = np.random.default_rng(3)
    clutter = [Detection(int(f), Box(float(x), float(y), 20, 20), float(c))
               for f, x, y, c in zip(rng.integers(1, 31, 80), rng.uniform(0, 600, 80), rng.uniform(300, 440, 80),
                                     rng.uniform(0, 0.49, 80))]
    base = run_rct(DetectionPool(dets), None, RctParams(use_medianflow=False), DIMS, 30)
    noisy = run_rct(DetectionPool(dets + clutter), None, RctParams(use_medianflow=False), DIMS, 30)
    assert len(base) == len(noisy) == 1


def test_timeout_raises():
    from rctrack.rct import TrackingTimeout

    with pytest.raises(TrackingTimeout):
        run_rct(DetectionPool(_linear(range(1, 31))), None, RctParams(), DIMS, 30, timeout=0.0)
