"""DIoU-based CLEAR MOT and HOTA evaluation.

Track sets are plain mappings ``frame -> {track_id: Box}``. A ground-truth and
a predicted box may match when their DIoU is at most a threshold: 1.25 to
start a correspondence (equal boxes touching at a corner) and 1.5 to keep an
existing one. HOTA is averaged over DIoU thresholds spanning [1.25, 1.5].
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Box

TrackSet = Mapping[int, Mapping[int, Box]]

INIT_THRESHOLD = 1.25
CARRY_THRESHOLD = 1.5
HOTA_THRESHOLDS = tuple(np.round(np.linspace(1.25, 1.5, 11), 3))


@dataclass
class EvalReport:
    hota: float
    mota: float
    id_switches: int
    false_positives: int
    misses: int
    matches: int
    precision: float
    recall: float
    num_gt: int
    det_a: float = 0.0
    ass_a: float = 0.0

    def as_row(self) -> dict[str, float]:
        return {
            "hota": self.hota,
            "mota": self.mota,
            "idsw": self.id_switches,
            "fp": self.false_positives,
            "fn": self.misses,
            "precision": self.precision,
            "recall": self.recall,
        }

    def as_dict(self) -> dict:
        return asdict(self)


def assignment(cost) -> list[tuple[int, int]]:
    """Optimal bipartite matching on a cost matrix; ``inf`` marks forbidden pairs.

    Among matchings using only admissible pairs, returns one with the most
    pairs and, among those, the least total cost. Pairs are (row, col) sorted
    by row.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.size == 0:
        return []
    ok = np.isfinite(cost)
    if not ok.any():
        return []
    finite = cost[ok]
    k = min(cost.shape)
    # Any matching with one more admissible pair beats any with fewer.
    big = 2.0 * k * (float(np.abs(finite).max()) + 1.0) + 1.0
    padded = np.where(ok, cost, big)
    rows, cols = linear_sum_assignment(padded)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if ok[r, c]]


def _as_array(boxes: list[Box]) -> np.ndarray:
    return np.array([b.as_tuple() for b in boxes], dtype=float).reshape(-1, 4)


def diou_matrix(a: list[Box], b: list[Box]) -> np.ndarray:
    """Pairwise DIoU between two box lists (rows: ``a``, cols: ``b``)."""
    A, B = _as_array(a), _as_array(b)
    ax1, ay1, aw, ah = (A[:, i : i + 1] for i in range(4))
    bx1, by1, bw, bh = (B[:, i][None, :] for i in range(4))
    ax2, ay2, bx2, by2 = ax1 + aw, ay1 + ah, bx1 + bw, by1 + bh
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0, None)
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
        iou = np.minimum(iou, 1.0)
        ex = np.maximum(ax2, bx2) - np.minimum(ax1, bx1)
        ey = np.maximum(ay2, by2) - np.minimum(ay1, by1)
        g2 = ex**2 + ey**2
        d2 = (ax1 + aw / 2 - bx1 - bw / 2) ** 2 + (ay1 + ah / 2 - by1 - bh / 2) ** 2
        out = np.where(g2 > 0, 1.0 - iou + d2 / g2, 0.0)
    return out


def _frames(gt: TrackSet, pred: TrackSet) -> list[int]:
    return sorted(set(gt) | set(pred))


def _match_frame(gids, gboxes, pids, pboxes, threshold) -> list[tuple[int, int]]:
    if not gids or not pids:
        return []
    d = diou_matrix(gboxes, pboxes)
    cost = np.where(d <= threshold, d, np.inf)
    return [(gids[r], pids[c]) for r, c in assignment(cost)]


def clearmot(gt: TrackSet, pred: TrackSet) -> EvalReport:
    """CLEAR MOT counts with DIoU matching and correspondence carry-over."""
    prev: dict[int, int] = {}
    last: dict[int, int] = {}
    fp = fn = idsw = tp = n_gt = 0
    for f in _frames(gt, pred):
        g = gt.get(f, {})
        p = pred.get(f, {})
        n_gt += len(g)
        matched: dict[int, int] = {}
        for gid, pid in prev.items():
            if gid in g and pid in p:
                d = diou_matrix([g[gid]], [p[pid]])[0, 0]
                if d <= CARRY_THRESHOLD:
                    matched[gid] = pid
        used = set(matched.values())
        gids = sorted(k for k in g if k not in matched)
        pids = sorted(k for k in p if k not in used)
        for gid, pid in _match_frame(gids, [g[k] for k in gids], pids, [p[k] for k in pids], INIT_THRESHOLD):
            matched[gid] = pid
        for gid, pid in matched.items():
            if gid in last and last[gid] != pid:
                idsw += 1
            last[gid] = pid
        tp += len(matched)
        fp += len(p) - len(matched)
        fn += len(g) - len(matched)
        prev = matched
    mota = 1.0 - (fn + fp + idsw) / max(n_gt, 1)
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / n_gt if n_gt else 1.0
    return EvalReport(
        hota=float("nan"), mota=mota, id_switches=idsw, false_positives=fp, misses=fn,
        matches=tp, precision=precision, recall=recall, num_gt=n_gt,
    )


def hota_components(gt: TrackSet, pred: TrackSet, thresholds=HOTA_THRESHOLDS) -> list[tuple[float, float, float]]:
    """Per-threshold (HOTA, DetA, AssA), matched iff DIoU <= threshold.

    Each frame is matched independently by minimum-total-DIoU assignment over
    the admissible pairs.
    """
    frames = _frames(gt, pred)
    n_gt = sum(len(gt.get(f, {})) for f in frames)
    n_pr = sum(len(pred.get(f, {})) for f in frames)
    gt_count: dict[int, int] = {}
    pr_count: dict[int, int] = {}
    per_frame = []
    for f in frames:
        g = gt.get(f, {})
        p = pred.get(f, {})
        for k in g:
            gt_count[k] = gt_count.get(k, 0) + 1
        for k in p:
            pr_count[k] = pr_count.get(k, 0) + 1
        gids, pids = sorted(g), sorted(p)
        d = diou_matrix([g[k] for k in gids], [p[k] for k in pids]) if gids and pids else None
        per_frame.append((gids, pids, d))

    out = []
    for tau in thresholds:
        tpa: dict[tuple[int, int], int] = {}
        tp = 0
        for gids, pids, d in per_frame:
            if d is None:
                continue
            cost = np.where(d <= tau, d, np.inf)
            for r, c in assignment(cost):
                key = (gids[r], pids[c])
                tpa[key] = tpa.get(key, 0) + 1
                tp += 1
        if tp == 0:
            out.append((0.0, 0.0, 0.0))
            continue
        det_a = tp / (n_gt + n_pr - tp)
        ass_a = sum(n * n / (gt_count[g] + pr_count[p] - n) for (g, p), n in tpa.items()) / tp
        out.append((math.sqrt(det_a * ass_a), det_a, ass_a))
    return out


def hota(gt: TrackSet, pred: TrackSet, thresholds=HOTA_THRESHOLDS) -> float:
    if not any(gt.values()) and not any(pred.values()):
        return 1.0
    comps = hota_components(gt, pred, thresholds)
    return float(np.mean([c[0] for c in comps]))


def evaluate(gt: TrackSet, pred: TrackSet) -> EvalReport:
    report = clearmot(gt, pred)
    if not any(gt.values()) and not any(pred.values()):
        report.hota, report.det_a, report.ass_a = 1.0, 1.0, 1.0
        return report
    comps = hota_components(gt, pred)
    report.hota = float(np.mean([c[0] for c in comps]))
    report.det_a = float(np.mean([c[1] for c in comps]))
    report.ass_a = float(np.mean([c[2] for c in comps]))
    return report


def tracks_to_set(tracks) -> dict[int, dict[int, Box]]:
    """Convert tracker output (objects with ``id`` and ``boxes``) to a track set."""
    out: dict[int, dict[int, Box]] = {}
    for t in tracks:
        for f, tb in t.boxes.items():
            if tb.box is not None:
                out.setdefault(f, {})[t.id] = tb.box
    return out
