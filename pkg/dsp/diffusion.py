"""Variance-preserving diffusion over actions: schedule, noising, loss and sampler.

Diffusion steps are 1-based (``t`` in ``1..T``); ``alpha_bar_0`` is taken as 1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Protocol, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, IndexOutOfRange, NumericError, ShapeError

LOGGER = logging.getLogger(__name__)

TERMINAL_ALPHA_BAR_MAX = 0.01


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def alpha_bar_at(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def coefficients(self, t: int) -> Tuple[float, float, float]:
        """Reverse-step constants: input scale, noise-prediction scale, added variance."""
        check_step(t, self)
        beta_t = float(self.beta[t - 1])
        alpha_bar_t = self.alpha_bar_at(t)
        scale = 1.0 / np.sqrt(float(self.alpha[t - 1]))
        eps_scale = beta_t / np.sqrt(1.0 - alpha_bar_t)
        variance = beta_t * (1.0 - self.alpha_bar_at(t - 1)) / (1.0 - alpha_bar_t)
        return float(scale), float(eps_scale), float(variance)


@dataclass(frozen=True, eq=False)
class DiffusionSample:
    a0: np.ndarray
    t: int
    eps: np.ndarray
    a_t: np.ndarray


class Denoiser(Protocol):
    """Anything that predicts the added noise from ``(a_t, t, obs)`` batches."""

    @property
    def act_dim(self) -> int: ...

    def forward(self, a_t: np.ndarray, t: np.ndarray, obs: np.ndarray) -> Tuple[np.ndarray, Any]: ...

    def backward(self, cache: Any, upstream: np.ndarray) -> Any: ...


def make_vp_schedule(T: int = 5, beta_start: float = 0.1, beta_end: float = 0.9) -> NoiseSchedule:
    """Linear-beta discrete schedule; rejects schedules whose final marginal is not near-Gaussian."""
    if int(T) != T or T < 1:
        raise ConfigurationError(f"T must be a positive integer, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
        )
    beta = np.linspace(beta_start, beta_end, int(T))
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if alpha_bar[-1] >= TERMINAL_ALPHA_BAR_MAX:
        raise ConfigurationError(
            f"terminal alpha_bar {alpha_bar[-1]:.6g} must be below {TERMINAL_ALPHA_BAR_MAX}"
        )
    return NoiseSchedule(T=int(T), beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def check_step(t: Any, schedule: NoiseSchedule) -> None:
    steps = np.asarray(t)
    if steps.size and (steps.min() < 1 or steps.max() > schedule.T):
        raise IndexOutOfRange(f"diffusion step {t} outside 1..{schedule.T}")


def forward_noise(a0: np.ndarray, t: Any, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form t-step marginal. ``t`` may be a scalar or one step per batch row."""
    check_step(t, schedule)
    a0 = np.asarray(a0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if a0.shape != eps.shape:
        raise ShapeError(f"noise shape {eps.shape} does not match action shape {a0.shape}")
    steps = np.asarray(t)
    alpha_bar = schedule.alpha_bar[steps - 1]
    if steps.ndim == 1:
        alpha_bar = alpha_bar[:, None]
    return np.sqrt(alpha_bar) * a0 + np.sqrt(1.0 - alpha_bar) * eps


def draw_sample(a0: np.ndarray, schedule: NoiseSchedule, rng) -> DiffusionSample:
    a0 = np.asarray(a0, dtype=np.float64)
    t = int(np.asarray(rng.integers(1, schedule.T + 1, size=1)).reshape(-1)[0])
    eps = np.asarray(rng.standard_normal(a0.shape), dtype=np.float64)
    return DiffusionSample(a0=a0, t=t, eps=eps, a_t=forward_noise(a0, t, eps, schedule))


def denoise_loss_batch(
    model: Denoiser,
    obs: np.ndarray,
    a0: np.ndarray,
    schedule: NoiseSchedule,
    rng,
) -> Tuple[float, Any]:
    """Mean squared noise-prediction error over the batch and action dims, with gradients.

    ``rng`` draws one step per row (``integers``) and then the noise (``standard_normal``).
    ``a0`` is expected inside the action box; stored datasets are clipped to it.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    a0 = np.atleast_2d(np.asarray(a0, dtype=np.float64))
    if obs.shape[0] != a0.shape[0]:
        raise ShapeError(f"{obs.shape[0]} observations but {a0.shape[0]} actions")
    batch, act_dim = a0.shape
    t = np.asarray(rng.integers(1, schedule.T + 1, size=batch)).reshape(batch)
    eps = np.asarray(rng.standard_normal((batch, act_dim)), dtype=np.float64).reshape(batch, act_dim)
    a_t = forward_noise(a0, t, eps, schedule)

    eps_hat, cache = model.forward(a_t, t, obs)
    diff = eps_hat - eps
    per_sample = np.mean(diff * diff, axis=1)
    bad = np.flatnonzero(~np.isfinite(per_sample))
    if bad.size:
        raise NumericError(f"non-finite loss at batch index {int(bad[0])}", index=int(bad[0]))
    upstream = 2.0 * diff / (batch * act_dim)
    return float(per_sample.mean()), model.backward(cache, upstream)


def denoise_loss(
    model: Denoiser, obs: np.ndarray, a0: np.ndarray, rng, schedule: NoiseSchedule
) -> Tuple[float, Any]:
    return denoise_loss_batch(model, np.asarray(obs)[None, :], np.asarray(a0)[None, :], schedule, rng)


def _denoise_batch(
    model: Denoiser,
    a_t: np.ndarray,
    t: int,
    obs: np.ndarray,
    schedule: NoiseSchedule,
    noise: np.ndarray,
) -> np.ndarray:
    scale, eps_scale, variance = schedule.coefficients(t)
    steps = np.full(a_t.shape[0], t, dtype=np.int64)
    eps_hat, _ = model.forward(a_t, steps, obs)
    return scale * (a_t - eps_scale * eps_hat) + np.sqrt(variance) * noise


def reverse_step(
    model: Denoiser,
    a_t: np.ndarray,
    t: int,
    obs: np.ndarray,
    schedule: NoiseSchedule,
    rng,
) -> np.ndarray:
    """One ancestral step a_t -> a_{t-1}; the last step (t=1) adds no noise and draws nothing."""
    check_step(t, schedule)
    a_t = np.asarray(a_t, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    noise = rng.standard_normal(a_t.shape) if t > 1 else np.zeros_like(a_t)
    return _denoise_batch(model, a_t[None, :], t, obs[None, :], schedule, np.asarray(noise)[None, :])[0]


def sample_action(model: Denoiser, obs: np.ndarray, schedule: NoiseSchedule, rng) -> np.ndarray:
    action = np.asarray(rng.standard_normal(model.act_dim), dtype=np.float64)
    for t in range(schedule.T, 0, -1):
        action = reverse_step(model, action, t, obs, schedule, rng)
    return np.clip(action, -1.0, 1.0)


def sample_actions(
    model: Denoiser,
    obs: np.ndarray,
    schedule: NoiseSchedule,
    rngs: Sequence[np.random.Generator],
) -> np.ndarray:
    """Batched :func:`sample_action`; row ``m`` consumes only ``rngs[m]``, in the same order."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if obs.shape[0] != len(rngs):
        raise ShapeError(f"{obs.shape[0]} observations but {len(rngs)} rng streams")
    act_dim = model.act_dim
    if not rngs:
        return np.zeros((0, act_dim))
    actions = np.stack([rng.standard_normal(act_dim) for rng in rngs])
    for t in range(schedule.T, 0, -1):
        if t > 1:
            noise = np.stack([rng.standard_normal(act_dim) for rng in rngs])
        else:
            noise = np.zeros_like(actions)
        actions = _denoise_batch(model, actions, t, obs, schedule, noise)
    return np.clip(actions, -1.0, 1.0)


__all__ = [
    "NoiseSchedule",
    "DiffusionSample",
    "Denoiser",
    "make_vp_schedule",
    "check_step",
    "forward_noise",
    "draw_sample",
    "denoise_loss",
    "denoise_loss_batch",
    "reverse_step",
    "sample_action",
    "sample_actions",
]
