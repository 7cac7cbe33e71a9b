"""Fixed-interval smoothing of a track's frame-indexed observations."""
from __future__ import annotations

from typing import Mapping

from .. import kalman
from ..geometry import Box
from ..kalman import KalmanConfig, KalmanState


def smooth_observations(obs: Mapping[int, Box | None], a: int, b: int, cfg: KalmanConfig) -> dict[int, KalmanState]:
    """Smoothed state for every frame in ``a..b``.

    The smoother runs between the first and last observed frames of the
    range; frames outside that span are extrapolated from its end states
    with the motion model.
    """
    seen = [f for f in range(a, b + 1) if obs.get(f) is not None]
    if not seen:
        raise ValueError(f"no observations in frames {a}..{b}")
    lo, hi = seen[0], seen[-1]
    states = kalman.smooth([obs.get(f) for f in range(lo, hi + 1)], obs[lo], cfg)
    out = {lo + i: s for i, s in enumerate(states)}
    s = out[lo]
    for f in range(lo - 1, a - 1, -1):
        s = kalman.predict_backward(s, cfg)
        out[f] = s
    s = out[hi]
    for f in range(hi + 1, b + 1):
        s = kalman.predict(s, cfg)
        out[f] = s
    return out
