"""Noise schedule, closed-form corruption, posterior and DDPM/DDIM steps.

Index convention: steps run ``1..K`` and every schedule vector is stored with
length ``K + 1`` so that ``alpha_bar[0] == 1`` (no corruption applied yet).
``beta[0]`` and ``sigma2[0]`` are unused placeholders set to 0.

The step functions only use arithmetic, so they accept numpy arrays and torch
tensors alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray

    @property
    def K(self) -> int:
        return len(self.beta) - 1

    def check_step(self, k: int, allow_zero: bool = False) -> int:
        k = int(k)
        lo = 0 if allow_zero else 1
        if not lo <= k <= self.K:
            raise ValueError(f"step {k} outside [{lo}, {self.K}]")
        return k


def make_schedule(K: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear, increasing beta schedule."""
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.zeros(K + 1)
    beta[1:] = np.linspace(beta_start, beta_end, K) if K > 1 else [beta_start]
    alpha = 1.0 - beta
    alpha_bar = np.ones(K + 1)
    for k in range(1, K + 1):
        alpha_bar[k] = alpha_bar[k - 1] * alpha[k]
    sigma2 = np.zeros(K + 1)
    sigma2[1:] = (1.0 - alpha_bar[:-1]) * beta[1:] / (1.0 - alpha_bar[1:])
    return NoiseSchedule(beta, alpha, alpha_bar, sigma2)


def q_sample(y0, k: int, eps, sched: NoiseSchedule):
    k = sched.check_step(k)
    if eps.shape != y0.shape:
        raise ValueError("eps and y0 must have the same shape")
    ab = sched.alpha_bar[k]
    return math.sqrt(ab) * y0 + math.sqrt(1.0 - ab) * eps


def q_step(y_prev, k: int, eps, sched: NoiseSchedule):
    """One forward transition ``Y_{k-1} -> Y_k``."""
    k = sched.check_step(k)
    return math.sqrt(sched.alpha[k]) * y_prev + math.sqrt(sched.beta[k]) * eps


def posterior_coefficients(k: int, sched: NoiseSchedule) -> tuple[float, float]:
    """Weights of ``Y_k`` and of the predicted ``Y_0`` in the posterior mean."""
    k = sched.check_step(k)
    if k == 1:
        # exact values; the general formula rounds beta / (1 - alpha)
        return 0.0, 1.0
    ab, ab_prev = sched.alpha_bar[k], sched.alpha_bar[k - 1]
    c_yk = math.sqrt(sched.alpha[k]) * (1.0 - ab_prev) / (1.0 - ab)
    c_y0 = math.sqrt(ab_prev) * sched.beta[k] / (1.0 - ab)
    return c_yk, c_y0


def posterior_mean(y_k, y0_hat, k: int, sched: NoiseSchedule):
    c_yk, c_y0 = posterior_coefficients(k, sched)
    return c_yk * y_k + c_y0 * y0_hat


def _standard_normal_like(y, rng: np.random.Generator):
    xi = rng.standard_normal(tuple(y.shape))
    return torch.from_numpy(xi).to(y.dtype) if isinstance(y, torch.Tensor) else xi


def ddpm_step(y_k, y0_hat, k: int, sched: NoiseSchedule, rng: np.random.Generator):
    mu = posterior_mean(y_k, y0_hat, k, sched)
    if k == 1:
        return mu
    return mu + math.sqrt(sched.sigma2[k]) * _standard_normal_like(y_k, rng)


def ddim_step(y_k, y0_hat, k: int, k_prev: int, sched: NoiseSchedule):
    """Deterministic (eta = 0) jump from step ``k`` to ``k_prev < k``."""
    k = sched.check_step(k)
    k_prev = sched.check_step(k_prev, allow_zero=True)
    if k_prev >= k:
        raise ValueError(f"k_prev ({k_prev}) must be below k ({k})")
    ab, ab_prev = sched.alpha_bar[k], sched.alpha_bar[k_prev]
    eps_hat = (y_k - math.sqrt(ab) * y0_hat) / math.sqrt(1.0 - ab)
    if k_prev == 0:
        return y0_hat
    return math.sqrt(ab_prev) * y0_hat + math.sqrt(1.0 - ab_prev) * eps_hat


def ddim_timesteps(K: int, num_steps: int) -> list[int]:
    """Evenly spaced descending steps from K, followed by 0."""
    if not 1 <= num_steps <= K:
        raise ValueError(f"num_steps must be in [1, {K}], got {num_steps}")
    ks = np.round(np.linspace(K, 0, num_steps + 1)).astype(int)
    return [int(k) for k in ks]


@torch.no_grad()
def sample(model, x, cp, sched: NoiseSchedule, num_steps: int = 10, rng: np.random.Generator | None = None):
    """DDIM reverse process from pure noise, conditioned on ``x`` and ``cp``.

    ``model(y_k, x, cp, k)`` must return the predicted clean signal with the
    shape of ``y_k``. ``x`` is (T, N, C) or batched (B, T, N, C).
    """
    rng = np.random.default_rng() if rng is None else rng
    x = torch.as_tensor(x)
    shape = x.shape[:-2]
    y = torch.from_numpy(rng.standard_normal(tuple(shape))).to(torch.float64)
    ks = ddim_timesteps(sched.K, num_steps)
    for k, k_prev in zip(ks[:-1], ks[1:]):
        y0_hat = model(y, x, cp, k)
        if y0_hat.shape != y.shape:
            raise ValueError(f"model returned shape {tuple(y0_hat.shape)}, expected {tuple(y.shape)}")
        y = ddim_step(y, y0_hat, k, k_prev, sched)
    return y
