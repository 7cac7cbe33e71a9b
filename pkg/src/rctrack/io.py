"""Readers and writers for detections, MOT track files, image frames and config.

Formats
-------
Detections: one CSV line per detection, ``frame,x,y,w,h,confidence``.
Frames count from 1 and no confidence filtering is applied.

Tracks / ground truth: MOT-style ``frame,id,x,y,w,h,conf,-1,-1,-1``. Only
the first six fields are read; ``conf`` is ignored on input. Output is
sorted by (frame, id) with six decimals.

Config: ``key = value`` lines, ``#`` comments. Keys are RCT parameter names
(``h_I``, ``delta`` ...), ``kalman.transition_cov`` / ``kalman.observation_cov``
/ ``kalman.initial_cov`` (comma-separated diagonal or full row-major
matrix) and ``medianflow.<field>``.
"""
from __future__ import annotations

import dataclasses
import math
import os
import re
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .detections import Detection, DetectionPool
from .geometry import Box, FrameDims
from .kalman import KalmanConfig
from .medianflow import MedianFlowConfig
from .rct.types import RctParams, Source, Track
from .video import VideoSource

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")


class InputError(ValueError):
    """Malformed or inconsistent input file."""


# ---------------------------------------------------------------- helpers


def read_text(path) -> str:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: cannot read: {exc.strerror or exc}") from exc
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not UTF-8 text (byte {exc.start})") from exc


def write_text_atomic(path, text: str) -> None:
    """Write via a temporary file and rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _float(tok: str, what: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise InputError(f"{what}: not a number: {tok.strip()!r}") from None
    if not math.isfinite(v):
        raise InputError(f"{what}: non-finite value {tok.strip()!r}")
    return v


def _int(tok: str, what: str) -> int:
    v = _float(tok, what)
    if v != int(v):
        raise InputError(f"{what}: expected an integer, got {tok.strip()!r}")
    return int(v)


def _rows(text: str):
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if line and not line.startswith("#"):
            yield no, line.split(",")


def _box(parts, where: str) -> Box:
    x, y, w, h = (_float(t, where) for t in parts)
    if w < 0 or h < 0:
        raise InputError(f"{where}: negative box size {w}x{h}")
    return Box(x, y, w, h)


# ------------------------------------------------------------- detections


def parse_detections(text: str, name: str = "<detections>") -> DetectionPool:
    dets = []
    for no, parts in _rows(text):
        where = f"{name}:{no}"
        if len(parts) != 6:
            raise InputError(f"{where}: expected 6 fields frame,x,y,w,h,confidence, got {len(parts)}")
        frame = _int(parts[0], where)
        if frame < 1:
            raise InputError(f"{where}: frame numbers start at 1, got {frame}")
        box = _box(parts[1:5], where)
        conf = _float(parts[5], where)
        if not 0.0 <= conf <= 1.0:
            raise InputError(f"{where}: confidence {conf} outside [0, 1]")
        dets.append(Detection(frame, box, conf))
    return DetectionPool(dets)


def read_detections(path) -> DetectionPool:
    return parse_detections(read_text(path), str(path))


def format_detections(pool: DetectionPool) -> str:
    lines = [
        f"{d.frame},{d.box.x:.6f},{d.box.y:.6f},{d.box.w:.6f},{d.box.h:.6f},{d.confidence:.6f}\n"
        for d in sorted(pool.detections, key=lambda d: (d.frame, d.box.x, d.box.y, -d.confidence))
    ]
    return "".join(lines)


def write_detections(path, pool: DetectionPool) -> None:
    write_text_atomic(path, format_detections(pool))


# ------------------------------------------------------------ MOT tracks


def parse_tracks(text: str, name: str = "<tracks>") -> dict[int, dict[int, Box]]:
    out: dict[int, dict[int, Box]] = {}
    for no, parts in _rows(text):
        where = f"{name}:{no}"
        if len(parts) < 6:
            raise InputError(f"{where}: expected at least 6 fields frame,id,x,y,w,h, got {len(parts)}")
        frame = _int(parts[0], where)
        tid = _int(parts[1], where)
        if frame < 1:
            raise InputError(f"{where}: frame numbers start at 1, got {frame}")
        box = _box(parts[2:6], where)
        per = out.setdefault(frame, {})
        if tid in per:
            raise InputError(f"{where}: duplicate entry for frame {frame}, id {tid}")
        per[tid] = box
    return out


def read_tracks(path) -> dict[int, dict[int, Box]]:
    return parse_tracks(read_text(path), str(path))


read_gt = read_tracks


def _mot_line(frame: int, tid: int, b: Box, conf: float) -> str:
    return f"{frame},{tid},{b.x:.6f},{b.y:.6f},{b.w:.6f},{b.h:.6f},{conf:.6f},-1,-1,-1\n"


def format_track_set(tset, conf: float = 1.0) -> str:
    return "".join(
        _mot_line(f, tid, tset[f][tid], conf) for f in sorted(tset) for tid in sorted(tset[f])
    )


def format_tracks(tracks: list[Track]) -> str:
    rows = []
    ids = set()
    for t in tracks:
        if t.id in ids:
            raise ValueError(f"duplicate track id {t.id}")
        ids.add(t.id)
        if not t.is_contiguous() or any(tb.source is Source.MISSING for tb in t.boxes.values()):
            raise ValueError(f"track {t.id} is not a contiguous run of boxes")
        for f, tb in t.boxes.items():
            conf = tb.confidence if tb.source is Source.DETECTION else 0.0
            rows.append((f, t.id, tb.box, conf))
    rows.sort(key=lambda r: (r[0], r[1]))
    return "".join(_mot_line(*r) for r in rows)


def write_tracks(path, tracks: list[Track]) -> None:
    write_text_atomic(path, format_tracks(tracks))


def write_track_set(path, tset, conf: float = 1.0) -> None:
    write_text_atomic(path, format_track_set(tset, conf))


# ---------------------------------------------------------------- frames


def to_gray(img: Image.Image) -> np.ndarray:
    """Gray frame in [0, 1]. Color uses integer luma weights 299/587/114."""
    if img.mode in ("I;16", "I;16B", "I;16L"):
        return (np.asarray(img, dtype=np.float64) / 65535.0).astype(np.float32)
    if img.mode in ("1", "L", "LA"):
        a = np.asarray(img.convert("L"), dtype=np.int64)
        return (a / 255.0).astype(np.float32)
    rgb = np.asarray(img.convert("RGB"), dtype=np.int64)
    luma = 299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2]
    return (luma / 255000.0).astype(np.float32)


def load_gray(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            return to_gray(img)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise InputError(f"{path}: unreadable image: {exc}") from exc


def save_gray(path, frame: np.ndarray) -> None:
    a = np.clip(np.rint(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(a, mode="L").save(path)


def list_frames(directory) -> list[Path]:
    """Numbered image files ``1..N`` in ``directory``, in order."""
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"{d}: not a directory")
    numbered: dict[int, Path] = {}
    for p in d.iterdir():
        if p.suffix.lower() not in IMAGE_SUFFIXES or not re.fullmatch(r"\d+", p.stem):
            continue
        n = int(p.stem)
        if n in numbered:
            raise InputError(f"{d}: two files for frame {n}: {numbered[n].name}, {p.name}")
        numbered[n] = p
    if not numbered:
        raise InputError(f"{d}: no numbered PNG/PPM/PGM frames")
    nums = sorted(numbered)
    expected = list(range(1, len(nums) + 1))
    if nums != expected:
        missing = sorted(set(range(1, nums[-1] + 1)) - set(nums))
        if nums[0] != 1 and not missing:
            raise InputError(f"{d}: frame numbering must start at 1, found {nums[0]}")
        raise InputError(f"{d}: numbering gap, frame {missing[0]} is missing")
    return [numbered[n] for n in nums]


def read_frames(directory, levels: int = 3, cache_size: int = 48) -> VideoSource:
    """Lazily loaded video; all frame headers are checked for equal size up front."""
    paths = list_frames(directory)
    sizes = []
    for p in paths:
        try:
            with Image.open(p) as img:
                sizes.append(img.size)
        except (OSError, UnidentifiedImageError) as exc:
            raise InputError(f"{p}: unreadable image: {exc}") from exc
    w, h = sizes[0]
    for p, s in zip(paths, sizes):
        if s != (w, h):
            raise InputError(f"{p}: size {s[0]}x{s[1]} differs from {w}x{h}")

    def loader(i: int) -> np.ndarray:
        return load_gray(paths[i - 1])

    return VideoSource(loader, len(paths), FrameDims(w, h), levels, cache_size)


def write_frames(directory, video: VideoSource) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    width = max(6, len(str(video.num_frames)))
    out = []
    for i in range(1, video.num_frames + 1):
        p = d / f"{i:0{width}d}.pgm"
        save_gray(p, video.frame(i))
        out.append(p)
    return out


# ---------------------------------------------------------------- config

_BOOL = {"true": True, "1": True, "yes": True, "on": True, "false": False, "0": False, "no": False, "off": False}
_KALMAN_KEYS = ("transition_cov", "observation_cov", "initial_cov")


@dataclasses.dataclass
class TrackerConfig:
    rct: RctParams = dataclasses.field(default_factory=RctParams)
    kalman: KalmanConfig = dataclasses.field(default_factory=KalmanConfig)
    medianflow: MedianFlowConfig = dataclasses.field(default_factory=MedianFlowConfig)

    def snapshot(self) -> dict[str, str]:
        """Every setting as ``key -> value text``; feeding it back reproduces the config."""
        out = {}
        for f in dataclasses.fields(RctParams):
            out[f.name] = _fmt(getattr(self.rct, f.name))
        for k in _KALMAN_KEYS:
            m = getattr(self.kalman, k)
            out[f"kalman.{k}"] = ",".join(repr(float(v)) for v in m.ravel())
        for f in dataclasses.fields(MedianFlowConfig):
            out[f"medianflow.{f.name}"] = _fmt(getattr(self.medianflow, f.name))
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.snapshot().items())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(value: str, typ, key: str):
    if typ is bool:
        v = _BOOL.get(value.lower())
        if v is None:
            raise ValueError(f"{key}: expected a boolean, got {value!r}")
        return v
    if typ is int:
        try:
            f = float(value)
        except ValueError:
            raise ValueError(f"{key}: expected an integer, got {value!r}") from None
        if not math.isfinite(f) or f != int(f):
            raise ValueError(f"{key}: expected an integer, got {value!r}")
        return int(f)
    if typ is float:
        try:
            f = float(value)
        except ValueError:
            raise ValueError(f"{key}: expected a number, got {value!r}") from None
        if not math.isfinite(f):
            raise ValueError(f"{key}: non-finite value {value!r}")
        return f
    return value


_MF_TYPES = {"grid": int, "window": int, "levels": int, "max_iter": int, "epsilon": float,
             "max_fb_error": float, "min_points": int, "min_eig": float, "max_residual": float}


def apply_settings(cfg: TrackerConfig, items) -> TrackerConfig:
    """New config with ``(key, value)`` pairs applied; unknown keys raise ValueError."""
    rct_types = RctParams.field_types()
    rct, kal, mf = {}, {}, {}
    for key, value in items:
        key, value = key.strip(), value.strip()
        if key in rct_types:
            rct[key] = _convert(value, rct_types[key], key)
        elif key.startswith("kalman.") and key[7:] in _KALMAN_KEYS:
            try:
                vals = [float(v) for v in value.split(",")]
            except ValueError:
                raise ValueError(f"{key}: expected comma-separated numbers") from None
            # a full matrix is given row-major, anything shorter is a diagonal
            kal[key[7:]] = np.array(vals).reshape(4, 4) if len(vals) == 16 else (
                np.array(vals).reshape(6, 6) if len(vals) == 36 else vals)
        elif key.startswith("medianflow.") and key[11:] in _MF_TYPES:
            mf[key[11:]] = _convert(value, _MF_TYPES[key[11:]], key)
        else:
            raise ValueError(f"unknown config key {key!r}")
    kcur = {k: getattr(cfg.kalman, k) for k in _KALMAN_KEYS}
    kcur.update(kal)
    return TrackerConfig(
        dataclasses.replace(cfg.rct, **rct),
        KalmanConfig(**kcur),
        dataclasses.replace(cfg.medianflow, **mf),
    )


def parse_config(text: str, name: str = "<config>", base: TrackerConfig | None = None) -> TrackerConfig:
    cfg = base or TrackerConfig()
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InputError(f"{name}:{no}: expected key = value")
        try:
            cfg = apply_settings(cfg, [(key, value)])
        except ValueError as exc:
            raise InputError(f"{name}:{no}: {exc}") from None
    return cfg


def read_config(path, base: TrackerConfig | None = None) -> TrackerConfig:
    return parse_config(read_text(path), str(path), base)


def parse_overrides(pairs) -> list[tuple[str, str]]:
    out = []
    for p in pairs:
        key, sep, value = p.partition("=")
        if not sep:
            raise InputError(f"override {p!r} is not key=value")
        out.append((key, value))
    return out
