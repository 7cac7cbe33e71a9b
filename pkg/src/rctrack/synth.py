"""Synthetic tracking scenes with exact ground truth.

Objects are textured rectangles moving over a textured background along
closed-form paths. Detections are the visible part of each object's box
with jitter, random dropout, scripted gaps and Poisson clutter. Everything
is a deterministic function of the scenario seed.
"""
from __future__ import annotations

import math
import shlex
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .detections import Detection, DetectionPool
from .geometry import Box, FrameDims, clip_to_frame, iou
from .video import VideoSource

MOTIONS = ("linear", "sinusoidal")


@dataclass(frozen=True)
class Motion:
    """Center path. ``t`` counts frames since spawn (0 on the spawn frame).

    linear: ``(x0 + vx t, y0 + vy t)``; sinusoidal adds
    ``amplitude * sin(2 pi t / period)`` to ``y`` (or ``x`` when ``axis='x'``).
    """

    kind: str = "linear"
    x0: float = 0.0
    y0: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    amplitude: float = 0.0
    period: float = 1.0
    axis: str = "y"

    def __post_init__(self) -> None:
        if self.kind not in MOTIONS:
            raise ValueError(f"unknown motion {self.kind!r}; expected one of {MOTIONS}")
        if self.kind == "sinusoidal" and self.period <= 0:
            raise ValueError("sinusoidal period must be positive")
        if self.axis not in ("x", "y"):
            raise ValueError("axis must be 'x' or 'y'")

    def center(self, t: float) -> tuple[float, float]:
        x = self.x0 + self.vx * t
        y = self.y0 + self.vy * t
        if self.kind == "sinusoidal":
            off = self.amplitude * math.sin(2.0 * math.pi * t / self.period)
            if self.axis == "y":
                y += off
            else:
                x += off
        return x, y


@dataclass(frozen=True)
class SynthObject:
    motion: Motion
    w: float = 40.0
    h: float = 40.0
    spawn: int = 1
    despawn: int | None = None  # inclusive; None runs to the last frame
    texture: int = 0
    contrast: float = 1.0  # 0 gives a flat object that optical flow cannot follow
    gaps: tuple[tuple[int, int], ...] = ()  # inclusive frame ranges without a detection
    gap_conf: float | None = None  # when set, gap frames get detections of this confidence

    def alive(self, frame: int, n: int) -> bool:
        end = n if self.despawn is None else self.despawn
        return self.spawn <= frame <= end

    def box(self, frame: int) -> Box:
        cx, cy = self.motion.center(frame - self.spawn)
        return Box.from_center(cx, cy, self.w, self.h)

    def in_gap(self, frame: int) -> bool:
        return any(a <= frame <= b for a, b in self.gaps)


@dataclass(frozen=True)
class Occluder:
    x: float
    y: float
    w: float
    h: float
    value: float = 0.5

    @property
    def box(self) -> Box:
        return Box(self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class Scenario:
    seed: int = 0
    width: int = 640
    height: int = 480
    num_frames: int = 100
    objects: tuple[SynthObject, ...] = ()
    occluders: tuple[Occluder, ...] = ()
    clutter_rate: float = 0.0  # expected clutter detections per frame
    dropout: float = 0.0
    jitter: float = 0.5  # detection noise std, pixels
    obj_conf: tuple[float, float] = (0.775, 0.175)  # uniform (mean, half-width)
    clutter_conf: tuple[float, float] = (0.155, 0.145)
    clutter_size: tuple[float, float] = (20.0, 60.0)
    background_contrast: float = 1.0
    min_visible: float = 0.5  # visible area fraction needed for a detection and a GT box
    spawn_overlap: float = 0.3  # maximum IoU between objects at a spawn frame

    def __post_init__(self) -> None:
        if self.width < 8 or self.height < 8 or self.num_frames < 1:
            raise ValueError("scenario needs at least 8x8 frames and one frame")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must lie in [0, 1]")
        if self.clutter_rate < 0 or self.jitter < 0:
            raise ValueError("clutter_rate and jitter must be non-negative")

    @property
    def dims(self) -> FrameDims:
        return FrameDims(self.width, self.height)


@dataclass
class SynthResult:
    video: VideoSource
    pool: DetectionPool
    gt: dict[int, dict[int, Box]]
    scenario: Scenario
    # detection index -> object id (0 for clutter)
    det_owner: list[int] = field(default_factory=list)


def _noise(rng: np.random.Generator, shape: tuple[int, int], sigma: float, contrast: float) -> np.ndarray:
    a = ndimage.gaussian_filter(rng.random(shape), sigma, mode="wrap")
    lo, hi = a.min(), a.max()
    a = (a - lo) / (hi - lo) if hi > lo else np.zeros(shape)
    return (0.5 + contrast * 0.45 * (2.0 * a - 1.0)).astype(np.float32)


def check_spawn_overlap(sc: Scenario) -> None:
    n = sc.num_frames
    for i, a in enumerate(sc.objects):
        for b in sc.objects[i + 1:]:
            for f in (a.spawn, b.spawn):
                if a.alive(f, n) and b.alive(f, n):
                    v = iou(a.box(f), b.box(f))
                    if v > sc.spawn_overlap:
                        raise ValueError(
                            f"objects overlap at spawn frame {f} (IoU {v:.2f} > {sc.spawn_overlap})"
                        )


class Renderer:
    """Draws frames on demand; object textures are sampled at sub-pixel offsets."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.bg = _noise(np.random.default_rng([sc.seed, 1]), (sc.height, sc.width), 2.0, sc.background_contrast)
        self.textures = [
            _noise(np.random.default_rng([sc.seed, 2, o.texture]), (int(math.ceil(o.h)) + 3, int(math.ceil(o.w)) + 3),
                   1.5, o.contrast)
            for o in sc.objects
        ]

    def __call__(self, frame: int) -> np.ndarray:
        sc = self.sc
        img = self.bg.copy()
        for o, tex in zip(sc.objects, self.textures):
            if not o.alive(frame, sc.num_frames):
                continue
            b = o.box(frame)
            c0, c1 = max(int(math.ceil(b.x)), 0), min(int(math.ceil(b.x2)), sc.width)
            r0, r1 = max(int(math.ceil(b.y)), 0), min(int(math.ceil(b.y2)), sc.height)
            if c1 <= c0 or r1 <= r0:
                continue
            rr, cc = np.mgrid[r0:r1, c0:c1]
            vals = ndimage.map_coordinates(tex, [rr - b.y + 1.0, cc - b.x + 1.0], order=1, mode="nearest")
            img[r0:r1, c0:c1] = vals
        for oc in sc.occluders:
            c0, c1 = max(int(round(oc.x)), 0), min(int(round(oc.x + oc.w)), sc.width)
            r0, r1 = max(int(round(oc.y)), 0), min(int(round(oc.y + oc.h)), sc.height)
            if c1 > c0 and r1 > r0:
                img[r0:r1, c0:c1] = oc.value
        return img


def _visible(b: Box, dims: FrameDims, occluders) -> tuple[Box | None, float]:
    vis = clip_to_frame(b, dims)
    if vis is None or b.area <= 0:
        return None, 0.0
    frac = vis.area / b.area
    for oc in occluders:
        ob = oc.box
        iw = min(vis.x2, ob.x2) - max(vis.x, ob.x)
        ih = min(vis.y2, ob.y2) - max(vis.y, ob.y)
        if iw > 0 and ih > 0:
            frac -= iw * ih / b.area
    return vis, max(frac, 0.0)


def _conf(rng, model: tuple[float, float]) -> float:
    m, s = model
    return float(np.clip(rng.uniform(m - s, m + s), 0.0, 1.0))


def generate(sc: Scenario) -> SynthResult:
    """Frames (lazily rendered), detections and ground truth for ``sc``."""
    check_spawn_overlap(sc)
    dims = sc.dims
    rng = np.random.default_rng([sc.seed, 0])
    dets: list[Detection] = []
    owner: list[int] = []
    gt: dict[int, dict[int, Box]] = {}
    cmin, cmax = sc.clutter_size
    for f in range(1, sc.num_frames + 1):
        for k, o in enumerate(sc.objects, start=1):
            if not o.alive(f, sc.num_frames):
                continue
            b = o.box(f)
            vis, frame_frac = _visible(b, dims, ())
            if vis is None or frame_frac < sc.min_visible:
                continue
            gt.setdefault(f, {})[k] = vis
            _, frac = _visible(b, dims, sc.occluders)
            # draws happen unconditionally so that scripted changes don't reshuffle the noise
            drop = rng.random() < sc.dropout
            conf = _conf(rng, sc.obj_conf)
            noise = rng.normal(0.0, sc.jitter, 4)
            if frac < sc.min_visible:
                continue
            if o.in_gap(f):
                if o.gap_conf is None:
                    continue
                conf = o.gap_conf
            elif drop:
                continue
            d = Box(vis.x + noise[0], vis.y + noise[1], max(vis.w + noise[2], 1.0), max(vis.h + noise[3], 1.0))
            d = clip_to_frame(d, dims)
            if d is not None:
                dets.append(Detection(f, d, conf))
                owner.append(k)
        for _ in range(rng.poisson(sc.clutter_rate)):
            w, h = rng.uniform(cmin, cmax, 2)
            x = rng.uniform(0, sc.width - w)
            y = rng.uniform(0, sc.height - h)
            dets.append(Detection(f, Box(x, y, w, h), _conf(rng, sc.clutter_conf)))
            owner.append(0)
    video = VideoSource(Renderer(sc), sc.num_frames, dims)
    return SynthResult(video, DetectionPool(dets), gt, sc, owner)


# ------------------------------------------------------------------ presets


def three_objects(seed: int = 0, clutter: int = 200, num_frames: int = 120) -> Scenario:
    """Three well-separated constant-velocity objects, 5% dropout, optional clutter."""
    objs = (
        SynthObject(Motion("linear", 120, 100, 2.5, 0.5), 40, 40, texture=1),
        SynthObject(Motion("linear", 500, 240, -2.0, 0.3), 50, 36, texture=2),
        SynthObject(Motion("linear", 160, 380, 1.5, -0.8), 44, 44, texture=3),
    )
    return Scenario(seed=seed, num_frames=num_frames, objects=objs, dropout=0.05,
                    clutter_rate=clutter / num_frames, obj_conf=(0.775, 0.175))


def sinusoid_gap(seed: int = 0, gap: tuple[int, int] = (41, 50)) -> Scenario:
    """One object on a sinusoidal path whose detections vanish for ten frames."""
    obj = SynthObject(Motion("sinusoidal", 80, 240, 3.0, 0.0, amplitude=60.0, period=48.0), 40, 40,
                      texture=4, gaps=(gap,))
    return Scenario(seed=seed, num_frames=100, objects=(obj,), jitter=0.5)


def fragmentation(seed: int = 0, gap: tuple[int, int] = (30, 41)) -> Scenario:
    """A flat object on a curved path loses its detections for twelve frames.

    Optical flow has no texture to follow, so the motion model alone has to
    bridge the gap, and it overshoots the bend.
    """
    obj = SynthObject(Motion("sinusoidal", 60, 240, 6.0, 0.0, amplitude=60.0, period=100.0), 40, 40,
                      texture=5, contrast=0.0, gaps=(gap,))
    return Scenario(seed=seed, num_frames=90, objects=(obj,), background_contrast=0.0)


def exits(seed: int = 0) -> Scenario:
    """Objects leaving through each of the four frame edges."""
    objs = (
        SynthObject(Motion("linear", 200, 120, -4.0, 0.0), 40, 40, texture=6),
        SynthObject(Motion("linear", 440, 360, 4.0, 0.0), 40, 40, texture=7),
        SynthObject(Motion("linear", 320, 180, 0.0, -3.0), 40, 40, texture=8),
        SynthObject(Motion("linear", 120, 330, 0.0, 3.0), 40, 40, texture=9),
    )
    return Scenario(seed=seed, num_frames=120, objects=objs, dropout=0.02)


def crossing_pair(seed: int = 0, num_frames: int = 60, meet: int = 30, speed: float = 4.0) -> Scenario:
    """Two objects on a horizontal line that pass through each other at frame ``meet``."""
    cx, cy = 320.0, 240.0
    t = meet - 1
    a = SynthObject(Motion("linear", cx - speed * t, cy, speed, 0.0), 40, 40, texture=10)
    b = SynthObject(Motion("linear", cx + speed * t, cy, -speed, 0.0), 40, 40, texture=11)
    return Scenario(seed=seed, num_frames=num_frames, objects=(a, b))


def gap_bridging(seed: int = 0) -> Scenario:
    """Flat objects on a flat background whose confident detections have long gaps
    that only low-confidence detections cover. Optical flow has nothing to follow."""
    objs = []
    for k, (y, phase) in enumerate(((120, 0), (300, 20))):
        gaps = ((30 + phase, 53 + phase), (90 + phase, 113 + phase))
        objs.append(SynthObject(Motion("sinusoidal", 60, y, 3.5, 0.0, amplitude=50.0, period=60.0), 40, 40,
                                texture=20 + k, contrast=0.0, gaps=gaps, gap_conf=0.2))
    return Scenario(seed=seed, num_frames=150, objects=tuple(objs), background_contrast=0.0,
                    obj_conf=(0.8, 0.15))


def throughput(seed: int = 0, num_frames: int = 2000) -> Scenario:
    """Busy long video: objects cross the frame in lanes, entering and leaving at the edges."""
    rng = np.random.default_rng([seed, 9])
    # lanes keep clear of the top and bottom edges so every object can seed a track
    lanes = 10
    lane_h = 40.0
    objs = []
    tex = 100
    for lane in range(lanes):
        speed = float(rng.uniform(2.5, 5.0)) * (1 if lane % 2 == 0 else -1)
        w, h = 40.0, 30.0
        y = 60.0 + lane * lane_h
        x0 = -w / 2 if speed > 0 else 640 + w / 2
        life = int(math.ceil((640 + w) / abs(speed)))
        f = 1 + int(rng.integers(0, 60))
        while f <= num_frames:
            objs.append(SynthObject(Motion("linear", x0, y, speed, 0.0), w, h, spawn=f,
                                    despawn=min(f + life, num_frames), texture=tex))
            tex += 1
            f += int(rng.integers(int(2 * w / abs(speed)) + 20, 200))
    return Scenario(seed=seed, num_frames=num_frames, objects=tuple(objs), dropout=0.05,
                    clutter_rate=8.0)


PRESETS = {
    "three_objects": three_objects,
    "sinusoid_gap": sinusoid_gap,
    "fragmentation": fragmentation,
    "exits": exits,
    "crossing_pair": crossing_pair,
    "gap_bridging": gap_bridging,
    "throughput": throughput,
}


def suite(seed: int = 0) -> dict[str, Scenario]:
    """The scenario suite used for ablations and metric closure."""
    return {
        "three_objects": three_objects(seed),
        "sinusoid_gap": sinusoid_gap(seed),
        "fragmentation": fragmentation(seed),
        "exits": exits(seed),
        "crossing_pair": crossing_pair(seed),
        "gap_bridging": gap_bridging(seed),
    }


# -------------------------------------------------------------- scenario files

_SCALAR = {f.name: f for f in fields(Scenario) if f.name not in ("objects", "occluders")}


def _parse_pair(v: str) -> tuple[float, float]:
    a, b = v.split(",")
    return float(a), float(b)


def _parse_gaps(v: str) -> tuple[tuple[int, int], ...]:
    out = []
    for part in v.split(","):
        a, _, b = part.partition("-")
        out.append((int(a), int(b or a)))
    return tuple(out)


def _kv(tokens: list[str], where: str) -> dict[str, str]:
    out = {}
    for tok in tokens:
        k, sep, v = tok.partition("=")
        if not sep:
            raise ValueError(f"{where}: expected key=value, got {tok!r}")
        out[k.strip()] = v.strip()
    return out


_MOTION_KEYS = {"motion", "x", "y", "vx", "vy", "amplitude", "period", "axis"}
_OBJECT_KEYS = {"w", "h", "spawn", "despawn", "texture", "contrast", "gaps", "gap_conf"}


def _parse_object(v: str, where: str) -> SynthObject:
    kv = _kv(shlex.split(v), where)
    unknown = set(kv) - _MOTION_KEYS - _OBJECT_KEYS
    if unknown:
        raise ValueError(f"{where}: unknown object keys {sorted(unknown)}")
    m = Motion(kv.get("motion", "linear"), float(kv.get("x", 0)), float(kv.get("y", 0)),
               float(kv.get("vx", 0)), float(kv.get("vy", 0)), float(kv.get("amplitude", 0)),
               float(kv.get("period", 1)), kv.get("axis", "y"))
    return SynthObject(
        m, float(kv.get("w", 40)), float(kv.get("h", 40)), int(kv.get("spawn", 1)),
        int(kv["despawn"]) if "despawn" in kv else None, int(kv.get("texture", 0)),
        float(kv.get("contrast", 1.0)), _parse_gaps(kv["gaps"]) if kv.get("gaps") else (),
        float(kv["gap_conf"]) if "gap_conf" in kv else None,
    )


def _parse_occluder(v: str, where: str) -> Occluder:
    kv = _kv(shlex.split(v), where)
    unknown = set(kv) - {"x", "y", "w", "h", "value"}
    if unknown:
        raise ValueError(f"{where}: unknown occluder keys {sorted(unknown)}")
    return Occluder(float(kv["x"]), float(kv["y"]), float(kv["w"]), float(kv["h"]), float(kv.get("value", 0.5)))


def parse_scenario(text: str, name: str = "<scenario>") -> Scenario:
    """Parse the key=value scenario format.

    ``preset = NAME`` starts from a preset; ``object = ...`` and
    ``occluder = ...`` lines (repeatable) hold space-separated key=value
    fields. Pairs such as ``obj_conf`` are written ``mean,spread``.
    """
    base: Scenario | None = None
    scalars: dict = {}
    objects: list[SynthObject] = []
    occluders: list[Occluder] = []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{name}:{no}"
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"{where}: expected key = value")
        key, val = key.strip(), val.strip()
        try:
            if key == "preset":
                if val not in PRESETS:
                    raise ValueError(f"unknown preset {val!r}")
                base = PRESETS[val]()
            elif key == "object":
                objects.append(_parse_object(val, where))
            elif key == "occluder":
                occluders.append(_parse_occluder(val, where))
            elif key in _SCALAR:
                typ = _SCALAR[key].type
                if key in ("obj_conf", "clutter_conf", "clutter_size"):
                    scalars[key] = _parse_pair(val)
                elif typ == "int":
                    scalars[key] = int(val)
                else:
                    scalars[key] = float(val)
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            msg = str(exc)
            raise ValueError(msg if msg.startswith(where) else f"{where}: {msg}") from None
    sc = base or Scenario()
    if objects:
        scalars["objects"] = tuple(objects)
    if occluders:
        scalars["occluders"] = tuple(occluders)
    return replace(sc, **scalars)


def load_scenario(path) -> Scenario:
    p = Path(path)
    return parse_scenario(p.read_text(), str(p))
