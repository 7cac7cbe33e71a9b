"""MedianFlow single-object tracker.

Points on a regular grid inside the box are tracked forward and backward with
pyramidal Lucas-Kanade. Points whose forward-backward error is at most the
median survive; the box moves by their median displacement and scales by the
median ratio of pairwise point distances. The tracker reports failure instead
of a box when the flow is unreliable.

Frames are single-channel float arrays of shape (height, width) with
intensities in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box, center

GrayFrame = np.ndarray


@dataclass(frozen=True)
class MedianFlowConfig:
    grid: int = 10
    window: int = 11
    levels: int = 3
    max_iter: int = 20
    epsilon: float = 0.03
    max_fb_error: float = 10.0
    min_points: int = 10
    # minimum eigenvalue of the window structure tensor, per window pixel
    min_eig: float = 1e-6
    # Kalal's displacement-consistency check, pixels
    max_residual: float = 10.0

    def __post_init__(self) -> None:
        if self.grid < 2 or self.window < 3 or self.window % 2 == 0:
            raise ValueError("grid must be >= 2 and window an odd number >= 3")
        if self.levels < 1 or self.max_iter < 1 or self.min_points < 1:
            raise ValueError("levels, max_iter and min_points must be positive")


@dataclass(frozen=True)
class FlowPoint:
    src: tuple[float, float]
    dst: tuple[float, float]
    fb_error: float
    valid: bool


def as_gray_frame(a) -> GrayFrame:
    a = np.asarray(a, dtype=np.float32)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"gray frame must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or a.min() < 0 or a.max() > 1:
        raise ValueError("gray frame values must be finite and within [0, 1]")
    return a


def pyramid(frame: GrayFrame, levels: int) -> list[GrayFrame]:
    """Level 0 is the frame; each further level halves it by 2x2 box averaging.

    Odd trailing rows/columns are dropped when halving.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    frame = np.asarray(frame, dtype=np.float32)
    need = 2 ** (levels - 1)
    h, w = frame.shape
    if h < need or w < need:
        raise ValueError(f"{w}x{h} frame too small for {levels} pyramid levels")
    out = [frame]
    for _ in range(levels - 1):
        a = out[-1]
        h2, w2 = a.shape[0] // 2, a.shape[1] // 2
        a = a[: 2 * h2, : 2 * w2]
        out.append(0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2]))
    return out


class Pyramid:
    """Image pyramid with per-level spatial gradients, built once per frame.

    Every level is stored with ``pad`` replicated border pixels so window
    sampling needs no per-index clamping; ``levels`` and ``grads`` are views
    of the unpadded interiors.
    """

    def __init__(self, frame: GrayFrame, levels: int, pad: int = 32):
        self.pad = pad
        inner = (slice(pad, -pad), slice(pad, -pad))
        self.padded = []
        for lv in pyramid(frame, levels):
            gy, gx = np.gradient(lv)
            self.padded.append(tuple(np.pad(a, pad, mode="edge") for a in (lv, gx, gy)))
        self.levels = [P[0][inner] for P in self.padded]
        self.grads = [(P[2][inner], P[1][inner]) for P in self.padded]  # (d/dy, d/dx)

    @property
    def shape(self) -> tuple[int, int]:
        return self.levels[0].shape


class _Windows:
    """Bilinear samples of square windows centered on sub-pixel points.

    Every sample of a window shares the center's fractional offset, so a
    window is a weighted sum of four integer-shifted patches. Images are
    padded arrays from :class:`Pyramid`; window corners are clamped to the
    unpadded interior, which reproduces border replication.
    """

    def __init__(self, shape: tuple[int, int], pad: int, px: np.ndarray, py: np.ndarray, r: int):
        h, w = shape
        if r + 1 > pad:
            raise ValueError(f"window radius {r} needs a pyramid pad of at least {r + 1}")
        x0 = np.floor(px)
        y0 = np.floor(py)
        self.fx = (px - x0)[:, None, None]
        self.fy = (py - y0)[:, None, None]
        wp = w + 2 * pad
        xi = np.clip(x0, 0, w - 1).astype(np.intp) + pad
        yi = np.clip(y0, 0, h - 1).astype(np.intp) + pad
        span = np.arange(-r, r + 2)
        offsets = span[:, None] * wp + span[None, :]
        self.flat = (yi * wp + xi)[:, None, None] + offsets
        self.k = 2 * r + 1

    def sample(self, img: np.ndarray) -> np.ndarray:
        P = img.ravel().take(self.flat)
        fx, fy = self.fx, self.fy
        top = P[:, :-1, :-1] * (1 - fx) + P[:, :-1, 1:] * fx
        bot = P[:, 1:, :-1] * (1 - fx) + P[:, 1:, 1:] * fx
        out = top * (1 - fy) + bot * fy
        return out.reshape(len(out), self.k * self.k)


def lk_track_points(
    prev: Pyramid, nxt: Pyramid, pts: np.ndarray, cfg: MedianFlowConfig = MedianFlowConfig()
) -> tuple[np.ndarray, np.ndarray]:
    """Pyramidal iterative Lucas-Kanade for an (n, 2) array of (x, y) points.

    Returns (new_points, valid). A point is invalid when its window's
    structure tensor is near-singular at some level, or when it starts or
    ends outside the frame.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    H, W = prev.shape
    valid = (pts[:, 0] >= 0) & (pts[:, 0] <= W - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= H - 1)
    r = cfg.window // 2
    m = cfg.window**2
    g = np.zeros((n, 2))
    nlev = min(len(prev.levels), len(nxt.levels))
    for L in range(nlev - 1, -1, -1):
        I, Ix, Iy = prev.padded[L]
        J = nxt.padded[L][0]
        hL, wL = prev.levels[L].shape
        jshape = nxt.levels[L].shape
        p = pts / (2**L)
        win = _Windows((hL, wL), prev.pad, p[:, 0], p[:, 1], r)
        T = win.sample(I)
        gx = win.sample(Ix)
        gy = win.sample(Iy)
        Gxx = (gx * gx).sum(1)
        Gxy = (gx * gy).sum(1)
        Gyy = (gy * gy).sum(1)
        half_tr = 0.5 * (Gxx + Gyy)
        min_eig = half_tr - np.sqrt(np.maximum(half_tr**2 - (Gxx * Gyy - Gxy**2), 0.0))
        valid &= min_eig / m >= cfg.min_eig
        det = Gxx * Gyy - Gxy**2
        det = np.where(valid, det, 1.0)
        d = np.zeros((n, 2))
        active = valid.copy()
        for _ in range(cfg.max_iter):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            q = p[idx] + g[idx] + d[idx]
            inside = (q[:, 0] >= 0) & (q[:, 0] <= wL - 1) & (q[:, 1] >= 0) & (q[:, 1] <= hL - 1)
            valid[idx[~inside]] = False
            active[idx[~inside]] = False
            idx, q = idx[inside], q[inside]
            Jw = _Windows(jshape, nxt.pad, q[:, 0], q[:, 1], r).sample(J)
            e = T[idx] - Jw
            bx = (e * gx[idx]).sum(1)
            by = (e * gy[idx]).sum(1)
            dx = (Gyy[idx] * bx - Gxy[idx] * by) / det[idx]
            dy = (Gxx[idx] * by - Gxy[idx] * bx) / det[idx]
            d[idx, 0] += dx
            d[idx, 1] += dy
            active[idx] = np.hypot(dx, dy) >= cfg.epsilon
        g = g + d
        if L > 0:
            g *= 2.0
    out = pts + g
    valid &= (out[:, 0] >= 0) & (out[:, 0] <= W - 1) & (out[:, 1] >= 0) & (out[:, 1] <= H - 1)
    valid &= np.all(np.isfinite(out), axis=1)
    return out, valid


def lk_track_point(prev: Pyramid, nxt: Pyramid, p: tuple[float, float], cfg: MedianFlowConfig = MedianFlowConfig()):
    """Track a single point; returns (x, y) or None when the flow is invalid."""
    out, ok = lk_track_points(prev, nxt, np.array([p], dtype=float), cfg)
    if not ok[0]:
        return None
    return float(out[0, 0]), float(out[0, 1])


def grid_points(box: Box, n: int) -> np.ndarray:
    fx = (np.arange(n) + 0.5) / n
    xs = box.x + fx * box.w
    ys = box.y + fx * box.h
    X, Y = np.meshgrid(xs, ys)
    return np.stack([X.ravel(), Y.ravel()], 1)


def flow_points(prev: Pyramid, nxt: Pyramid, box: Box, cfg: MedianFlowConfig = MedianFlowConfig()) -> list[FlowPoint]:
    src = grid_points(box, cfg.grid)
    fwd, ok_f = lk_track_points(prev, nxt, src, cfg)
    back, ok_b = lk_track_points(nxt, prev, fwd, cfg)
    fb = np.hypot(*(src - back).T)
    ok = ok_f & ok_b & np.isfinite(fb)
    return [
        FlowPoint((float(s[0]), float(s[1])), (float(t[0]), float(t[1])), float(e) if v else float("inf"), bool(v))
        for s, t, e, v in zip(src, fwd, fb, ok)
    ]


def _median_scale(src: np.ndarray, dst: np.ndarray) -> float:
    i, j = np.triu_indices(len(src), k=1)
    d0 = np.hypot(*(src[i] - src[j]).T)
    d1 = np.hypot(*(dst[i] - dst[j]).T)
    keep = d0 > 1e-9
    if not keep.any():
        return 1.0
    return float(np.median(d1[keep] / d0[keep]))


def track_box(prev, nxt, box: Box, cfg: MedianFlowConfig = MedianFlowConfig()) -> Box | None:
    """Advance ``box`` from ``prev`` to ``nxt``; returns None on tracking failure.

    ``prev``/``nxt`` may be gray frames or prebuilt :class:`Pyramid` objects.
    """
    if box.degenerate or not box.is_finite():
        return None
    prev = prev if isinstance(prev, Pyramid) else Pyramid(as_gray_frame(prev), cfg.levels)
    nxt = nxt if isinstance(nxt, Pyramid) else Pyramid(as_gray_frame(nxt), cfg.levels)
    H, W = prev.shape
    if box.x2 <= 0 or box.y2 <= 0 or box.x >= W or box.y >= H:
        return None

    src = grid_points(box, cfg.grid)
    fwd, ok_f = lk_track_points(prev, nxt, src, cfg)
    back, ok_b = lk_track_points(nxt, prev, fwd, cfg)
    ok = ok_f & ok_b
    if ok.sum() < cfg.min_points:
        return None
    fb = np.hypot(*(src[ok] - back[ok]).T)
    keep = fb <= np.median(fb)
    s, t = src[ok][keep], fwd[ok][keep]
    if len(s) < cfg.min_points or np.median(fb[keep]) > cfg.max_fb_error:
        return None

    disp = t - s
    dx, dy = np.median(disp[:, 0]), np.median(disp[:, 1])
    residual = np.median(np.hypot(disp[:, 0] - dx, disp[:, 1] - dy))
    if residual > cfg.max_residual:
        return None
    scale = _median_scale(s, t)
    if not np.isfinite(scale) or scale <= 0:
        return None
    cx, cy = center(box)
    out = Box.from_center(float(cx + dx), float(cy + dy), box.w * scale, box.h * scale)
    ncx, ncy = center(out)
    if not (0 <= ncx <= W and 0 <= ncy <= H):
        return None
    return out
