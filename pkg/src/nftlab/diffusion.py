"""Forward noising process and noise-prediction batches for toy denoisers.

Steps ``t`` are 1-based (1..T). The denoiser sees ``x_t`` with ``t / T``
appended as an extra feature and is trained to predict the injected noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_T = 50
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.2


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    betas: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class NoisySample:
    x_t: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    x_0: np.ndarray


def make_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                  beta_end: float = DEFAULT_BETA_END) -> DiffusionSchedule:
    """Linear beta schedule; alpha_bar_t is the running product of (1 - beta)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0 <= beta_start <= beta_end < 1:
        raise ValueError(f"need 0 <= beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T)
    return DiffusionSchedule(T, betas, np.cumprod(1 - betas))


def _check_t(schedule, t):
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"t must lie in [1, {schedule.T}]")
    return t


def forward_noise(schedule: DiffusionSchedule, x_0, t, rng: np.random.Generator) -> NoisySample:
    """x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps with eps ~ N(0, I).

    ``t`` is a scalar or one step per row of ``x_0``.
    """
    x_0 = np.asarray(x_0, dtype=np.float64)
    t = _check_t(schedule, t)
    eps = rng.standard_normal(x_0.shape)
    ab = schedule.alpha_bar[t - 1]
    if ab.ndim == 1 and x_0.ndim == 2:
        ab = ab[:, None]
    x_t = np.sqrt(ab) * x_0 + np.sqrt(1 - ab) * eps
    return NoisySample(x_t, t, eps, x_0)


def recover_x0(schedule: DiffusionSchedule, x_t, t, eps) -> np.ndarray:
    t = _check_t(schedule, t)
    ab = schedule.alpha_bar[t - 1]
    if ab.ndim == 1 and np.ndim(x_t) == 2:
        ab = ab[:, None]
    return (np.asarray(x_t) - np.sqrt(1 - ab) * eps) / np.sqrt(ab)


def denoise_inputs(schedule: DiffusionSchedule, x_t, t) -> np.ndarray:
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (np.shape(x_t)[0],))
    return np.concatenate([np.asarray(x_t, dtype=np.float64), (t / schedule.T)[:, None]], axis=1)


def build_denoise_batch(schedule: DiffusionSchedule, clean, rng: np.random.Generator,
                        dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """(x_t with t/T appended, eps targets); t ~ Uniform{1..T} per row."""
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 2 or clean.shape[0] == 0:
        raise ValueError("clean batch must be a non-empty 2-D array")
    t = rng.integers(1, schedule.T + 1, size=clean.shape[0])
    s = forward_noise(schedule, clean, t, rng)
    return denoise_inputs(schedule, s.x_t, t).astype(dtype), s.eps.astype(dtype)
