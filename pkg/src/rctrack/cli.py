"""Command-line entry points.

Exit codes: 0 success, 2 input error, 3 timeout.
"""
from __future__ import annotations

import argparse
import colorsys
import csv
import datetime as _dt
import io as _stdio
import json
import logging
import math
import os
import sys
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from PIL import Image, ImageDraw

from . import __version__, io, synth
from .geometry import FrameDims
from .metrics import EvalReport, evaluate, tracks_to_set
from .rct import TrackingTimeout, run_rct

log = logging.getLogger("rctrack")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_TIMEOUT = 3
DEFAULT_TIMEOUT = 1800.0
# extra time the hard watchdog grants past the cooperative deadline
WATCHDOG_GRACE = 5.0
REPORT_COLUMNS = ("hota", "mota", "idsw", "fp", "fn", "precision", "recall")


# ----------------------------------------------------------------- helpers


def _config(args) -> io.TrackerConfig:
    cfg = io.read_config(args.config_file) if args.config_file else io.TrackerConfig()
    if args.config:
        try:
            cfg = io.apply_settings(cfg, io.parse_overrides(args.config))
        except ValueError as exc:
            raise io.InputError(str(exc)) from None
    return cfg


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_json(path, obj) -> None:
    io.write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_inputs(det_path, frames_dir, width, height, num_frames):
    pool = io.read_detections(det_path)
    video = io.read_frames(frames_dir) if frames_dir else None
    if video is not None:
        dims, n = video.dims, video.num_frames
    else:
        if not width or not height:
            raise io.InputError("--width and --height are required without --frames")
        dims, n = FrameDims(width, height), num_frames or max(pool.last_frame, 1)
    if pool.last_frame > n:
        raise io.InputError(f"{det_path}: detections reach frame {pool.last_frame}, video has {n} frames")
    return pool, video, dims, n


@dataclass
class VideoJob:
    detections: str
    frames: str | None
    output: str
    width: int | None = None
    height: int | None = None
    num_frames: int | None = None


@dataclass
class VideoResult:
    detections: str
    frames: str | None
    output: str
    status: str = "OK"
    seconds: float = 0.0
    num_tracks: int = 0
    error: str | None = None

    def as_dict(self) -> dict:
        d = {
            "detections": self.detections, "frames": self.frames, "output": self.output,
            "status": self.status, "seconds": round(self.seconds, 3), "num_tracks": self.num_tracks,
        }
        if self.error:
            d["error"] = self.error
        return d


def _run_job(job: VideoJob, cfg: io.TrackerConfig, timeout: float) -> VideoResult:
    res = VideoResult(job.detections, job.frames, job.output)
    t0 = time.monotonic()
    try:
        pool, video, dims, n = _load_inputs(job.detections, job.frames, job.width, job.height, job.num_frames)
        remaining = timeout - (time.monotonic() - t0)
        tracks = run_rct(pool, video, cfg.rct, dims, n, cfg.kalman, cfg.medianflow, timeout=max(remaining, 0.0))
        io.write_tracks(job.output, tracks)
        res.num_tracks = len(tracks)
    except TrackingTimeout:
        res.status = "TIMEOUT"
    except (io.InputError, OSError) as exc:
        res.status, res.error = "INPUT_ERROR", str(exc)
    res.seconds = time.monotonic() - t0
    return res


def _manifest(args, cfg, results: list[VideoResult], started: str, wall: float) -> dict:
    statuses = {r.status for r in results}
    status = "TIMEOUT" if "TIMEOUT" in statuses else ("INPUT_ERROR" if "INPUT_ERROR" in statuses else "OK")
    return {
        "tool": "rctrack",
        "version": __version__,
        "command": "track",
        "started": started,
        "inputs": {"config_file": args.config_file, "overrides": list(args.config or [])},
        "params": cfg.snapshot(),
        "timeout_seconds": args.timeout,
        "wall_seconds": round(wall, 3),
        "videos": [r.as_dict() for r in results],
        "status": status,
    }


# -------------------------------------------------------------------- track


def cmd_track(args) -> int:
    started, t0 = _now(), time.monotonic()
    cfg = _config(args)
    dets = args.detections
    frames = args.frames or [None] * len(dets)
    outs = args.output
    if len(frames) != len(dets) or len(outs) != len(dets):
        raise io.InputError("--detections, --frames and --output need the same number of entries")
    jobs = [VideoJob(d, f, o, args.width, args.height, args.num_frames) for d, f, o in zip(dets, frames, outs)]
    manifest_path = args.manifest or f"{outs[0]}.manifest.json"
    results: dict[int, VideoResult] = {}
    lock = threading.Lock()

    def watchdog() -> None:
        # The cooperative deadline did not fire in time: record and bail out hard.
        with lock:
            final = [results.get(i) or VideoResult(j.detections, j.frames, j.output, status="TIMEOUT",
                                                   seconds=time.monotonic() - t0)
                     for i, j in enumerate(jobs)]
            _write_json(manifest_path, _manifest(args, cfg, final, started, time.monotonic() - t0))
        sys.stderr.write("rctrack: timeout\n")
        sys.stderr.flush()
        os._exit(EXIT_TIMEOUT)

    rounds = math.ceil(len(jobs) / max(args.jobs, 1))
    timer = threading.Timer(args.timeout * rounds + WATCHDOG_GRACE, watchdog)
    timer.daemon = True
    timer.start()
    try:
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as ex:
                futs = [ex.submit(_run_job, j, cfg, args.timeout) for j in jobs]
                for i, fut in enumerate(futs):
                    r = fut.result()
                    with lock:
                        results[i] = r
        else:
            for i, j in enumerate(jobs):
                r = _run_job(j, cfg, args.timeout)
                with lock:
                    results[i] = r
    finally:
        timer.cancel()
    final = [results[i] for i in range(len(jobs))]
    man = _manifest(args, cfg, final, started, time.monotonic() - t0)
    with lock:
        _write_json(manifest_path, man)
    for r in final:
        if r.status == "INPUT_ERROR":
            sys.stderr.write(f"rctrack: {r.error}\n")
        else:
            log.info("%s: %s, %d tracks in %.1fs", r.detections, r.status, r.num_tracks, r.seconds)
    if man["status"] == "TIMEOUT":
        sys.stderr.write("rctrack: timeout\n")
        return EXIT_TIMEOUT
    return EXIT_INPUT if man["status"] == "INPUT_ERROR" else EXIT_OK


# --------------------------------------------------------------------- eval


def format_report(rep: EvalReport) -> str:
    row = rep.as_row()
    width = max(len(k) for k in row)
    lines = []
    for k in REPORT_COLUMNS:
        v = row[k]
        lines.append(f"{k.upper():<{width}}  {v:.4f}" if isinstance(v, float) else f"{k.upper():<{width}}  {v}")
    return "\n".join(lines) + "\n"


def report_csv(rows: list[dict], columns) -> str:
    buf = _stdio.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def cmd_eval(args) -> int:
    _config(args)  # nothing to tune here, but bad keys are still rejected
    gt = io.read_gt(args.gt)
    pred = io.read_tracks(args.pred)
    rep = evaluate(gt, pred)
    table = format_report(rep)
    io.write_text_atomic(args.report, report_csv([rep.as_row()], REPORT_COLUMNS))
    table_path = args.table or str(Path(args.report).with_suffix(".txt"))
    io.write_text_atomic(table_path, table)
    sys.stdout.write(table)
    return EXIT_OK


# -------------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    # overrides are appended as scenario lines, so they win over the file
    if args.scenario:
        text = io.read_text(args.scenario) + "\n"
    else:
        text = f"preset = {args.preset}\n"
    if args.config_file:
        text += io.read_text(args.config_file) + "\n"
    text += "".join(f"{k} = {v}\n" for k, v in io.parse_overrides(args.config or []))
    try:
        sc = synth.parse_scenario(text, args.scenario or args.preset)
    except ValueError as exc:
        raise io.InputError(str(exc)) from None
    res = synth.generate(sc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_detections(out / "detections.csv", res.pool)
    io.write_track_set(out / "gt.csv", res.gt)
    if not args.no_frames:
        io.write_frames(out / "frames", res.video)
    log.info("wrote %d detections and %d frames to %s", len(res.pool), sc.num_frames, out)
    return EXIT_OK


# ---------------------------------------------------------------------- viz


def track_color(tid: int) -> tuple[int, int, int]:
    """Stable, well-spread color per track id."""
    hue = (tid * 0.618033988749895) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 1.0)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def cmd_viz(args) -> int:
    _config(args)
    paths = io.list_frames(args.frames)
    tset = io.read_tracks(args.tracks)
    if tset and max(tset) > len(paths):
        raise io.InputError(f"{args.tracks}: track frame {max(tset)} beyond the {len(paths)} video frames")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    width = max(6, len(str(len(paths))))
    for i, p in enumerate(paths, start=1):
        try:
            with Image.open(p) as src:
                img = src.convert("RGB")
        except OSError as exc:
            raise io.InputError(f"{p}: unreadable image: {exc}") from None
        draw = ImageDraw.Draw(img)
        for tid, b in sorted(tset.get(i, {}).items()):
            c = track_color(tid)
            draw.rectangle([b.x, b.y, b.x2, b.y2], outline=c, width=2)
            draw.text((b.x + 2, b.y + 2), str(tid), fill=c)
        img.save(out / f"{i:0{width}d}.png", optimize=False)
    return EXIT_OK


# -------------------------------------------------------------------- sweep


def cmd_sweep(args) -> int:
    cfg = _config(args)
    pool, video, dims, n = _load_inputs(args.detections, args.frames, args.width, args.height, args.num_frames)
    gt = io.read_gt(args.gt)
    try:
        hs = sorted({0.0} | {float(h) for h in args.thresholds.split(",") if h.strip()})
    except ValueError:
        raise io.InputError(f"--thresholds: expected comma-separated numbers, got {args.thresholds!r}") from None
    if any(not 0.0 <= h <= 1.0 for h in hs):
        raise io.InputError("--thresholds must lie in [0, 1]")
    rows = []
    for h in hs:
        sub = pool.prefilter(h) if h > 0 else pool
        t0 = time.monotonic()
        tracks = run_rct(sub, video, cfg.rct, dims, n, cfg.kalman, cfg.medianflow)
        dt = time.monotonic() - t0
        rep = evaluate(gt, tracks_to_set(tracks))
        row = {"threshold": h, **rep.as_row(), "num_detections": len(sub), "num_tracks": len(tracks),
               "seconds": dt}
        rows.append(row)
        log.info("h=%.2f: HOTA %.4f, %d tracks, %.1fs", h, rep.hota, len(tracks), dt)
    cols = ("threshold", *REPORT_COLUMNS, "num_detections", "num_tracks", "seconds")
    io.write_text_atomic(args.output, report_csv(rows, cols))
    for r in rows:
        sys.stdout.write(f"h={r['threshold']:.2f}  HOTA={r['hota']:.4f}  MOTA={r['mota']:.4f}\n")
    return EXIT_OK


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rctrack", description="Confidence-ranked multi-object tracking.")
    ap.add_argument("--version", action="version", version=f"rctrack {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, need_video: bool = False) -> None:
        p.add_argument("--config-file", help="key=value settings file")
        p.add_argument("--config", action="append", metavar="KEY=VALUE", help="override one setting (repeatable)")
        if need_video:
            p.add_argument("--width", type=int, help="frame width when no frames are given")
            p.add_argument("--height", type=int, help="frame height when no frames are given")
            p.add_argument("--num-frames", type=int, help="video length when no frames are given")

    p = sub.add_parser("track", help="track one or more videos")
    p.add_argument("--detections", nargs="+", required=True)
    p.add_argument("--frames", nargs="+", help="frame directories, one per detections file")
    p.add_argument("--output", nargs="+", required=True)
    p.add_argument("--manifest", help="run manifest path (default: OUTPUT.manifest.json)")
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT, help="seconds per video")
    p.add_argument("--jobs", type=int, default=1, help="videos processed in parallel")
    common(p, need_video=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score predicted tracks against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--report", required=True, help="CSV report path")
    p.add_argument("--table", help="text table path (default: REPORT with .txt suffix)")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scenario", help="scenario file")
    g.add_argument("--preset", choices=sorted(synth.PRESETS))
    p.add_argument("--out", required=True)
    p.add_argument("--no-frames", action="store_true", help="skip writing images")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("viz", help="draw tracks onto frames")
    p.add_argument("--frames", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("sweep", help="HOTA against confidence prefilter thresholds")
    p.add_argument("--detections", required=True)
    p.add_argument("--frames")
    p.add_argument("--gt", required=True)
    p.add_argument("--thresholds", default="0.3,0.5,0.7")
    p.add_argument("--output", required=True)
    common(p, need_video=True)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (io.InputError, OSError) as exc:
        sys.stderr.write(f"rctrack: {exc}\n")
        return EXIT_INPUT
    except TrackingTimeout:
        sys.stderr.write("rctrack: timeout\n")
        return EXIT_TIMEOUT


if __name__ == "__main__":
    sys.exit(main())
