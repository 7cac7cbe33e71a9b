"""Acceptance criteria, one test each, every one printing a PASS/FAIL line.

The heavier scenarios share their runs through module-scoped fixtures.
"""
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from rctrack import io, kalman, synth
from rctrack.geometry import Box, center, diou
from rctrack.kalman import KalmanConfig
from rctrack.metrics import assignment, evaluate, tracks_to_set
from rctrack.rct import RctParams, run_rct

from .oracles import brute_force_assignment, joint_gaussian_posterior

pytestmark = pytest.mark.acceptance

VARIANTS = {
    "full": RctParams(),
    "no_medianflow": RctParams(use_medianflow=False),
    "no_joining": RctParams(use_joining=False),
    "no_offscreen_trim": RctParams(trim_mode="no_offscreen"),
}


def _hota(result, params, pool=None):
    tracks = run_rct(result.pool if pool is None else pool, result.video, params)
    return evaluate(result.gt, tracks_to_set(tracks)).hota


@pytest.fixture(scope="module")
def suite_results():
    return {name: synth.generate(sc) for name, sc in synth.suite(0).items()}


@pytest.fixture(scope="module")
def ablation(suite_results):
    return {v: {name: _hota(r, p) for name, r in suite_results.items()} for v, p in VARIANTS.items()}


# ------------------------------------------------------------------ oracles


def _random_sequence(rng):
    T = int(rng.integers(1, 9))
    boxes = []
    x, y = rng.uniform(0, 200, 2)
    for _ in range(T):
        x += rng.normal(3, 2)
        y += rng.normal(-1, 2)
        boxes.append(Box(x, y, rng.uniform(5, 40), rng.uniform(5, 40)) if rng.random() > 0.35 else None)
    if boxes[0] is None:
        boxes[0] = Box(x, y, 12, 12)
    A, B = rng.normal(size=(6, 6)), rng.normal(size=(4, 4))
    cfg = KalmanConfig(
        transition_cov=np.diag(rng.uniform(0.1, 2, 6)),
        observation_cov=B @ B.T + 0.1 * np.eye(4),
        initial_cov=A @ A.T + 0.1 * np.eye(6),
    )
    return boxes, cfg


def test_kalman_oracle(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(200):
        boxes, cfg = _random_sequence(rng)
        out = kalman.smooth(boxes, boxes[0], cfg)
        zs = [None if b is None else kalman.measurement(b) for b in boxes]
        means, covs = joint_gaussian_posterior(
            zs, kalman.init(boxes[0], cfg).mean, cfg.initial_cov, kalman.transition_matrix(),
            cfg.transition_cov, kalman.observation_matrix(), cfg.observation_cov,
        )
        for s, m, c in zip(out, means, covs):
            worst = max(worst, np.linalg.norm(s.mean - m) / max(np.linalg.norm(m), 1.0),
                        np.linalg.norm(s.cov - c) / max(np.linalg.norm(c), 1.0))
    dt = time.perf_counter() - t0
    verdict("kalman oracle", worst <= 1e-6 and dt < 10, f"max rel err {worst:.2e}, {dt:.2f}s")


def test_assignment_oracle(verdict):
    rng = np.random.default_rng(7)
    bad = 0
    spent = 0.0
    for _ in range(500):
        nr, nc = rng.integers(1, 8, 2)
        cost = rng.integers(-10, 50, (nr, nc)).astype(float)
        cost[rng.random((nr, nc)) < 0.25] = np.inf
        t0 = time.perf_counter()
        pairs = assignment(cost)
        spent += time.perf_counter() - t0
        got = (len(pairs), sum(cost[r, c] for r, c in pairs))
        bad += got != brute_force_assignment(cost)
    verdict("assignment oracle", bad == 0 and spent < 10, f"{bad} mismatches, {spent:.2f}s")


def test_diou_analytic_suite(verdict):
    failures = []
    for w, h in [(10, 10), (3, 7), (0.5, 2.5), (64, 16)]:
        a = Box(100, 100, w, h)
        if diou(a, a) != 0.0:
            failures.append(f"identical {w}x{h}")
        for sx, sy in [(1, 1), (1, -1), (-1, 1), (-1, -1)]:
            b = Box(100 + sx * w, 100 + sy * h, w, h)
            if diou(a, b) != 1.25:
                failures.append(f"corner {w}x{h} {sx},{sy}: {diou(a, b)!r}")
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        a = Box(*rng.uniform(-50, 50, 2), *rng.uniform(0.1, 40, 2))
        b = Box(*rng.uniform(-50, 50, 2), *rng.uniform(0.1, 40, 2))
        d, e = diou(a, b), diou(b, a)
        if abs(d - e) > 1e-12 or not 0.0 <= d < 2.0:
            failures.append(f"pair {a} {b}: {d} {e}")
            break
    verdict("DIoU analytic suite", not failures, "; ".join(failures[:3]) or "corners 1.25, 10k random pairs")


def test_metric_closure(verdict, suite_results):
    bad = []
    for name, r in suite_results.items():
        rep = evaluate(r.gt, r.gt)
        if not (rep.hota == 1.0 and rep.mota == 1.0 and rep.id_switches == 0):
            bad.append(f"{name}: {rep.as_row()}")
    verdict("metric closure", not bad, "; ".join(bad) or f"{len(suite_results)} scenarios")


# --------------------------------------------------------------- end to end


def test_end_to_end_three_objects(verdict, suite_results):
    r = suite_results["three_objects"]
    t0 = time.perf_counter()
    tracks = run_rct(r.pool, r.video, RctParams())
    dt = time.perf_counter() - t0
    rep = evaluate(r.gt, tracks_to_set(tracks))
    ok = len(tracks) == 3 and rep.id_switches == 0 and rep.hota >= 0.9 and dt < 60
    verdict("end-to-end three objects", ok,
            f"{len(tracks)} tracks, IDSW {rep.id_switches}, HOTA {rep.hota:.4f}, {dt:.1f}s")


def test_prefilter_sweep(verdict):
    r = synth.generate(synth.gap_bridging(0))
    base = _hota(r, RctParams())
    filtered = {h: _hota(r, RctParams(), r.pool.prefilter(h)) for h in (0.3, 0.5, 0.7)}
    ok = all(base > v for v in filtered.values())
    detail = f"h=0: {base:.4f}, " + ", ".join(f"h={h}: {v:.4f}" for h, v in filtered.items())
    verdict("prefilter sweep", ok, detail)


def test_ablation_direction(verdict, ablation):
    avg = {v: float(np.mean(list(s.values()))) for v, s in ablation.items()}
    drops = {v: avg["full"] - a for v, a in avg.items() if v != "full"}
    ok = all(d > 0 for d in drops.values()) and max(drops, key=drops.get) == "no_offscreen_trim"
    verdict("ablation direction", ok, ", ".join(f"{v} {a:.4f}" for v, a in avg.items()))


def _gap_error(result, params, gap):
    tracks = run_rct(result.pool, result.video, params)
    diag = math.hypot(result.scenario.width, result.scenario.height)
    errs = []
    for f in range(gap[0], gap[1] + 1):
        (g,) = result.gt[f].values()
        # frames the tracker dropped count as a full-diagonal miss
        errs.append(min((math.dist(center(t.boxes[f].box), center(g)) for t in tracks if f in t.boxes),
                        default=diag))
    return float(np.mean(errs))


def test_sot_fallback_efficacy(verdict):
    gap = (41, 50)
    r = synth.generate(synth.sinusoid_gap(0, gap))
    full = _gap_error(r, RctParams(), gap)
    kal = _gap_error(r, RctParams(use_medianflow=False), gap)
    verdict("SOT fallback efficacy", 2 * full <= kal, f"gap center error {full:.2f}px vs {kal:.2f}px")


@pytest.mark.slow
def test_throughput(verdict):
    sc = synth.throughput(0)
    r = synth.generate(sc)
    per_frame = len(r.pool) / sc.num_frames
    t0 = time.perf_counter()
    tracks = run_rct(r.pool, r.video, RctParams())
    dt = time.perf_counter() - t0
    ok = sc.num_frames == 2000 and (sc.width, sc.height) == (640, 480) and dt < 300
    verdict("throughput", ok, f"{sc.num_frames} frames, {per_frame:.1f} dets/frame, {len(tracks)} tracks, {dt:.1f}s")


def test_timeout_contract(verdict, tmp_path):
    r = synth.generate(synth.three_objects(0))
    io.write_detections(tmp_path / "d.csv", r.pool)
    io.write_frames(tmp_path / "frames", r.video)
    out, man = tmp_path / "t.csv", tmp_path / "m.json"
    proc = subprocess.run(
        [sys.executable, "-m", "rctrack.cli", "track", "--detections", str(tmp_path / "d.csv"),
         "--frames", str(tmp_path / "frames"), "--output", str(out), "--manifest", str(man),
         "--timeout", "0.05"],
        capture_output=True, text=True, timeout=120,
    )
    status = json.loads(man.read_text())["status"] if man.exists() else None
    ok = proc.returncode == 3 and status == "TIMEOUT" and not out.exists()
    verdict("timeout contract", ok, f"exit {proc.returncode}, manifest {status}, track file {out.exists()}")
