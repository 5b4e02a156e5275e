"""Cosine noise schedule, forward corruption and deterministic DDIM updates.

Everything here works in *signal space*: box corners encoded with
:func:`lesiondiff.geometry.signal_encode`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DEFAULT_B_SCALE

ALPHA_BAR_FLOOR = 1e-5
# per-step retention floor (beta <= 0.999) used only in the clipped tail
MIN_STEP_RETENTION = 1e-3


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.shape != (self.T + 1,):
            raise ValueError(f"alpha_bar must have T+1={self.T + 1} entries, got {ab.shape}")
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)

    def __getitem__(self, t: int) -> float:
        return float(self.alpha_bar[t])

    def snr(self) -> np.ndarray:
        return self.alpha_bar / (1.0 - self.alpha_bar)


def cosine_closed_form(t, T: int, s_offset: float = 0.008):
    t = np.asarray(t, dtype=np.float64)
    f = np.cos((t / T + s_offset) / (1 + s_offset) * np.pi / 2) ** 2
    f0 = np.cos(s_offset / (1 + s_offset) * np.pi / 2) ** 2
    return f / f0


def cosine_schedule(T: int = 1000, s_offset: float = 0.008) -> NoiseSchedule:
    """Cosine alpha-bar table for ``t = 0..T``.

    Entries follow the closed form until it drops below ``ALPHA_BAR_FLOOR``.
    From there on each step keeps at least ``MIN_STEP_RETENTION`` of the
    previous value, so the table stays positive and strictly decreasing
    (the raw closed form hits exactly zero at ``t = T``).
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not 0 < s_offset < 0.1:
        raise ValueError(f"s_offset must lie in (0, 0.1), got {s_offset!r}")
    T = int(T)
    ab = cosine_closed_form(np.arange(T + 1), T, s_offset)
    ab[0] = 1.0
    for t in range(1, T + 1):
        if ab[t] < ALPHA_BAR_FLOOR:
            ab[t] = max(ab[t], MIN_STEP_RETENTION * ab[t - 1])
    return NoiseSchedule(T=T, alpha_bar=ab)


def _check_t(t: int, sched: NoiseSchedule) -> int:
    if int(t) != t or not 0 <= t <= sched.T:
        raise ValueError(f"timestep {t!r} outside [0, {sched.T}]")
    return int(t)


def corrupt(z0, t: int, sched: NoiseSchedule, noise, b_scale: float | None = DEFAULT_B_SCALE):
    """Sample from q(z_t | z_0) with caller-supplied standard-normal ``noise``.

    Pass ``b_scale=None`` to skip the final clamp.
    """
    t = _check_t(t, sched)
    ab = sched.alpha_bar[t]
    z0 = np.asarray(z0, dtype=np.float64)
    zt = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * np.asarray(noise, dtype=np.float64)
    if b_scale is not None:
        zt = np.clip(zt, -b_scale, b_scale)
    return zt


def ddim_step(zt, z0_hat, t: int, t_prev: int, sched: NoiseSchedule,
              b_scale: float | None = DEFAULT_B_SCALE):
    """Deterministic (eta = 0) DDIM jump from ``t`` to ``t_prev`` given a predicted z_0."""
    t = _check_t(t, sched)
    t_prev = _check_t(t_prev, sched)
    if t == 0:
        raise ValueError("no DDIM step is possible from t=0")
    if t_prev >= t:
        raise ValueError(f"t_prev ({t_prev}) must be smaller than t ({t})")
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t_prev]
    z0_hat = np.asarray(z0_hat, dtype=np.float64)
    eps_hat = (np.asarray(zt, dtype=np.float64) - np.sqrt(ab_t) * z0_hat) / np.sqrt(1.0 - ab_t)
    if t_prev == 0 and ab_prev == 1.0:
        out = z0_hat.copy()
    else:
        out = np.sqrt(ab_prev) * z0_hat + np.sqrt(1.0 - ab_prev) * eps_hat
    if b_scale is not None:
        out = np.clip(out, -b_scale, b_scale)
    return out


def timestep_ladder(T: int, steps: int) -> list[int]:
    """Evenly spaced integer timesteps from ``T`` down to 0 (``steps + 1`` entries)."""
    if not 1 <= steps <= T:
        raise ValueError(f"steps must lie in [1, T={T}], got {steps}")
    ladder = [int(round(T * (steps - i) / steps)) for i in range(steps + 1)]
    return ladder
