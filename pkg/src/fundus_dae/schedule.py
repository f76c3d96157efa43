"""Noise schedule tables, closed-form forward noising and single reverse steps.

Timesteps are indexed ``0 .. T-1``. ``forward_diffuse(x0, 0, eps)`` already
carries one step of noise; the un-noised state is the raw image. The reverse
step out of ``t = 0`` lands on that raw image and is deterministic.

All functions accept numpy arrays or torch tensors. Coefficients are applied
as float64 scalars (or per-sample tensors when ``t`` is a batch of indices).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import ValidationError


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def alpha_bar_prev(self, t: int) -> float:
        """``alpha_bar[t-1]`` with the convention ``alpha_bar[-1] = 1``."""
        return 1.0 if t <= 0 else float(self.alpha_bar[t - 1])


@dataclass
class ScheduleConfig:
    T: int = 200
    beta_min: float = 1e-4
    beta_max: float = 0.02
    kind: str = "linear"

    def build(self) -> NoiseSchedule:
        return build_schedule(self.T, self.beta_min, self.beta_max, self.kind)


def schedule_from_betas(betas: Sequence[float]) -> NoiseSchedule:
    beta = np.asarray(betas, dtype=np.float64)
    if beta.ndim != 1 or beta.size == 0:
        raise ValidationError("T: need at least one timestep")
    if not np.all((beta > 0) & (beta < 1)):
        raise ValidationError("beta: every entry must lie in (0, 1)")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    ab_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    sigma = np.sqrt(beta * (1.0 - ab_prev) / (1.0 - alpha_bar))
    for arr in (beta, alpha, alpha_bar, sigma):
        arr.setflags(write=False)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma)


def build_schedule(T: int, beta_min: float = 1e-4, beta_max: float = 0.02, kind: str = "linear") -> NoiseSchedule:
    """Linear beta schedule from ``beta_min`` to ``beta_max`` over ``T`` steps."""
    if not isinstance(T, (int, np.integer)) or T <= 0:
        raise ValidationError(f"T: must be a positive integer, got {T!r}")
    if not 0.0 < beta_min < 1.0:
        raise ValidationError(f"beta_min: must lie in (0, 1), got {beta_min!r}")
    if not 0.0 < beta_max < 1.0:
        raise ValidationError(f"beta_max: must lie in (0, 1), got {beta_max!r}")
    if beta_min > beta_max:
        raise ValidationError("beta_min: must not exceed beta_max")
    if kind != "linear":
        raise ValidationError(f"kind: only 'linear' is supported, got {kind!r}")
    return schedule_from_betas(np.linspace(beta_min, beta_max, int(T), dtype=np.float64))


def strided_timesteps(T: int, steps: int) -> list[int]:
    """Evenly spaced timesteps from ``T-1`` down to 0 (``steps`` of them)."""
    if not 1 <= steps <= T:
        raise ValidationError(f"steps: must lie in [1, {T}], got {steps}")
    if steps == 1:
        return [T - 1]
    ts = np.unique(np.round(np.linspace(0, T - 1, steps)).astype(int))
    return [int(t) for t in ts[::-1]]


def _check_t(t: int, sched: NoiseSchedule) -> None:
    if not 0 <= t < sched.T:
        raise IndexError(f"timestep {t} outside [0, {sched.T})")


def _coef(table: np.ndarray, t, like):
    """Scalar coefficient for int ``t``; broadcastable (B,1,...,1) column for a batch."""
    if isinstance(t, (int, np.integer)):
        return float(table[int(t)])
    if isinstance(like, torch.Tensor):
        idx = torch.as_tensor(t, device=like.device).long()
        col = torch.as_tensor(table, dtype=like.dtype, device=like.device)[idx]
        return col.reshape(-1, *([1] * (like.ndim - 1)))
    col = np.asarray(table)[np.asarray(t, dtype=int)]
    return col.reshape(-1, *([1] * (np.ndim(like) - 1)))


def _same_shape(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ValidationError(f"{what}: shape {tuple(b.shape)} does not match {tuple(a.shape)}")


def forward_diffuse(x0, t, eps, sched: NoiseSchedule):
    """Sample ``q(x_t | x_0)``: ``sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps``.

    ``t`` is an int, or a length-B sequence of ints for a batch of images.
    """
    _same_shape(x0, eps, "eps")
    if isinstance(t, (int, np.integer)):
        _check_t(int(t), sched)
        ab = float(sched.alpha_bar[int(t)])
        return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
    ts = np.asarray(t.cpu() if isinstance(t, torch.Tensor) else t, dtype=int)
    if ts.min() < 0 or ts.max() >= sched.T:
        raise IndexError(f"timestep outside [0, {sched.T})")
    sqrt_ab = np.sqrt(sched.alpha_bar)
    sqrt_1mab = np.sqrt(1.0 - sched.alpha_bar)
    return _coef(sqrt_ab, ts, x0) * x0 + _coef(sqrt_1mab, ts, x0) * eps


def posterior_coefficients(sched: NoiseSchedule, t: int, t_prev: int | None = None) -> tuple[float, float, float]:
    """Return ``(c_x0, c_xt, sigma)`` of ``q(x_{t_prev} | x_t, x0)``.

    ``t_prev`` defaults to ``t - 1``; a larger jump is used for strided
    sampling, where the effective beta is ``1 - ab_t / ab_prev``.
    """
    _check_t(t, sched)
    if t_prev is None:
        t_prev = t - 1
    if not -1 <= t_prev < t:
        raise ValidationError(f"t_prev: must lie in [-1, {t}), got {t_prev}")
    ab_t = float(sched.alpha_bar[t])
    ab_prev = 1.0 if t_prev < 0 else float(sched.alpha_bar[t_prev])
    if t_prev == t - 1:
        beta = float(sched.beta[t])
        alpha = float(sched.alpha[t])
    else:
        alpha = ab_t / ab_prev
        beta = 1.0 - alpha
    c_x0 = math.sqrt(ab_prev) * beta / (1.0 - ab_t)
    c_xt = math.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t)
    sigma = math.sqrt(beta * (1.0 - ab_prev) / (1.0 - ab_t))
    return c_x0, c_xt, sigma


def posterior_step(x_t, x0_hat, t: int, sched: NoiseSchedule, noise, t_prev: int | None = None, literal: bool = False):
    """One reverse step ``x_t -> x_{t_prev}`` given the clean-image prediction.

    With ``literal=True`` the mean is ``x0_hat`` itself (``x0_hat + sigma * noise``),
    which is how the reverse density reads if the x0 predictor is taken as the
    Gaussian mean. Kept for comparison only; it is not a consistent sampler.
    Stepping to ``t_prev = -1`` returns ``x0_hat`` exactly.
    """
    _same_shape(x_t, x0_hat, "x0_hat")
    _same_shape(x_t, noise, "noise")
    c_x0, c_xt, sigma = posterior_coefficients(sched, t, t_prev)
    if (t - 1 if t_prev is None else t_prev) < 0:
        return x0_hat.clone() if isinstance(x0_hat, torch.Tensor) else np.array(x0_hat, copy=True)
    if literal:
        return x0_hat + sigma * noise
    return c_x0 * x0_hat + c_xt * x_t + sigma * noise


def renoise(x_prev, t_prev: int, t: int, sched: NoiseSchedule, eps):
    """Push a sample from level ``t_prev`` back up to level ``t`` (``q(x_t | x_{t_prev})``)."""
    ab_t = float(sched.alpha_bar[t])
    ab_prev = 1.0 if t_prev < 0 else float(sched.alpha_bar[t_prev])
    ratio = ab_t / ab_prev
    return math.sqrt(ratio) * x_prev + math.sqrt(1.0 - ratio) * eps
