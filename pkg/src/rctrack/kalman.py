"""Constant-velocity Kalman filtering and RTS smoothing of box trajectories.

State layout is ``(cx, cy, vx, vy, w, h)``: box center, center velocity in
pixels per frame, and box size. Only ``(cx, cy, w, h)`` is observed. The size
follows a random walk; there are no size velocities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Box

STATE_DIM = 6
OBS_DIM = 4
_LOG_2PI = math.log(2.0 * math.pi)

# Indices of the observed state components.
OBS_IDX = (0, 1, 4, 5)


def transition_matrix(steps: int = 1) -> np.ndarray:
    F = np.eye(STATE_DIM)
    F[0, 2] = steps
    F[1, 3] = steps
    return F


def observation_matrix() -> np.ndarray:
    H = np.zeros((OBS_DIM, STATE_DIM))
    for row, col in enumerate(OBS_IDX):
        H[row, col] = 1.0
    return H


_F = transition_matrix()
_F_INV = np.linalg.inv(_F)
_H = observation_matrix()


@dataclass
class KalmanConfig:
    transition_cov: np.ndarray = field(
        default_factory=lambda: np.diag([1.0, 1.0, 0.2, 0.2, 1.0, 1.0])
    )
    observation_cov: np.ndarray = field(default_factory=lambda: np.diag([0.5, 0.5, 0.5, 0.5]))
    initial_cov: np.ndarray = field(default_factory=lambda: np.eye(STATE_DIM))

    def __post_init__(self) -> None:
        self.transition_cov = _check_cov(self.transition_cov, STATE_DIM, "transition_cov")
        self.observation_cov = _check_cov(self.observation_cov, OBS_DIM, "observation_cov")
        self.initial_cov = _check_cov(self.initial_cov, STATE_DIM, "initial_cov")


def _check_cov(m, n: int, name: str) -> np.ndarray:
    m = np.array(m, dtype=float)
    if m.ndim == 1:
        m = np.diag(m)
    if m.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}, got {m.shape}")
    if not np.allclose(m, m.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m).min() < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")
    return m


@dataclass
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def velocity(self) -> tuple[float, float]:
        return float(self.mean[2]), float(self.mean[3])

    @property
    def speed(self) -> float:
        return math.hypot(self.mean[2], self.mean[3])

    def box(self) -> Box:
        """The box implied by the state mean (sizes clamped at zero)."""
        cx, cy, _, _, w, h = self.mean
        return Box.from_center(cx, cy, w, h)

    def reversed(self) -> "KalmanState":
        """Same belief with the velocity negated, i.e. the time-reversed state."""
        mean = self.mean.copy()
        mean[2:4] *= -1
        J = np.diag([1.0, 1.0, -1.0, -1.0, 1.0, 1.0])
        return KalmanState(mean, J @ self.cov @ J)


def measurement(b: Box) -> np.ndarray:
    return np.array([b.x + b.w / 2.0, b.y + b.h / 2.0, b.w, b.h])


def init(b: Box, cfg: KalmanConfig) -> KalmanState:
    z = measurement(b)
    mean = np.array([z[0], z[1], 0.0, 0.0, z[2], z[3]])
    return KalmanState(mean, cfg.initial_cov.copy())


def predict(s: KalmanState, cfg: KalmanConfig) -> KalmanState:
    mean = _F @ s.mean
    cov = _F @ s.cov @ _F.T + cfg.transition_cov
    return KalmanState(mean, _sym(cov))


def predict_backward(s: KalmanState, cfg: KalmanConfig) -> KalmanState:
    """One step back in time under the same motion model."""
    mean = _F_INV @ s.mean
    cov = _F_INV @ s.cov @ _F_INV.T + cfg.transition_cov
    return KalmanState(mean, _sym(cov))


def update(s: KalmanState, obs: Box | None, cfg: KalmanConfig) -> KalmanState:
    """Kalman correction. ``None`` marks a missing observation and is a no-op."""
    if obs is None:
        return s
    z = measurement(obs)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"non-finite observation {obs}")
    S = _H @ s.cov @ _H.T + cfg.observation_cov
    PHt = s.cov @ _H.T
    K = np.linalg.solve(S, PHt.T).T
    mean = s.mean + K @ (z - _H @ s.mean)
    # Joseph form keeps the covariance symmetric PSD.
    IKH = np.eye(STATE_DIM) - K @ _H
    cov = IKH @ s.cov @ IKH.T + K @ cfg.observation_cov @ K.T
    return KalmanState(mean, _sym(cov))


def log_likelihood(s: KalmanState, b: Box, cfg: KalmanConfig) -> float:
    """Log density of the measurement of ``b`` under the predictive of ``s``."""
    S = _H @ s.cov @ _H.T + cfg.observation_cov
    r = measurement(b) - _H @ s.mean
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular innovation covariance") from exc
    u = np.linalg.solve(L, r)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return float(-0.5 * (u @ u + logdet + OBS_DIM * _LOG_2PI))


def likelihood(s: KalmanState, b: Box, cfg: KalmanConfig) -> float:
    return math.exp(log_likelihood(s, b, cfg))


def filter_sequence(
    observations: Sequence[Box | None], init_box: Box, cfg: KalmanConfig
) -> tuple[list[KalmanState], list[KalmanState]]:
    """Forward pass. Returns (priors, posteriors), one per observation.

    The state is initialised from ``init_box`` at the first index; the prior
    there is the initial belief itself.
    """
    priors: list[KalmanState] = []
    posts: list[KalmanState] = []
    s = init(init_box, cfg)
    for i, obs in enumerate(observations):
        if i > 0:
            s = predict(posts[-1], cfg)
        priors.append(s)
        posts.append(update(s, obs, cfg))
    return priors, posts


def rts(priors: Sequence[KalmanState], posts: Sequence[KalmanState]) -> list[KalmanState]:
    """Rauch-Tung-Striebel backward pass over a filtered sequence."""
    n = len(posts)
    out: list[KalmanState] = [None] * n  # type: ignore[list-item]
    out[-1] = posts[-1]
    for k in range(n - 2, -1, -1):
        P = posts[k].cov
        C = np.linalg.solve(priors[k + 1].cov, (P @ _F.T).T).T
        mean = posts[k].mean + C @ (out[k + 1].mean - priors[k + 1].mean)
        cov = P + C @ (out[k + 1].cov - priors[k + 1].cov) @ C.T
        out[k] = KalmanState(mean, _sym(cov))
    return out


def smooth(observations: Sequence[Box | None], init_box: Box, cfg: KalmanConfig) -> list[KalmanState]:
    """Fixed-interval smoothed marginals for every index, missing slots included."""
    if len(observations) == 0:
        raise ValueError("cannot smooth an empty sequence")
    priors, posts = filter_sequence(observations, init_box, cfg)
    return rts(priors, posts)


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)
