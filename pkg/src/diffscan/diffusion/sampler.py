"""Reverse-process moments and the ancestral (unguided) sampler."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np


class Denoiser(Protocol):
    shape: tuple[int, ...]
    backend: str

    def eps(self, x: np.ndarray, t) -> np.ndarray: ...


@dataclass(frozen=True)
class ReverseMoments:
    mean: np.ndarray
    var: float  # isotropic: covariance is var * I


def reverse_moments(model, x_t: np.ndarray, t: int, final_deterministic: bool = True) -> ReverseMoments:
    """``mu = (x_t - beta_t / sqrt(1 - ab_t) * eps_hat) / sqrt(alpha_t)`` and ``Sigma = beta_t I``.

    With ``final_deterministic`` the last step (t = 1) has zero variance.
    """
    sched = model.schedule
    t = sched.check_t(t, allow_zero=False)
    x_t = np.asarray(x_t, dtype=np.float64)
    beta, alpha, ab = sched.beta[t], sched.alpha[t], sched.alpha_bar[t]
    eps_hat = model.eps(x_t, t)
    mean = (x_t - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
    var = 0.0 if (t == 1 and final_deterministic) else float(beta)
    return ReverseMoments(mean, var)


def initial_noise(model, n: int | None, rng: np.random.Generator) -> np.ndarray:
    shape = model.shape if n is None else (n,) + tuple(model.shape)
    return rng.standard_normal(shape)


def draw(moments: ReverseMoments, mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """``x_{t-1} ~ N(mean, var I)``; always consumes one normal draw per coordinate."""
    z = rng.standard_normal(mean.shape)
    return mean + np.sqrt(moments.var) * z


def unguided_sample(model, seed, n: int | None = None, final_deterministic: bool = True) -> np.ndarray:
    """Ancestral sampling from ``x_T ~ N(0, I)`` down to ``x_0``; deterministic per seed."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = initial_noise(model, n, rng)
    for t in range(model.schedule.T, 0, -1):
        m = reverse_moments(model, x, t, final_deterministic)
        x = draw(m, m.mean, rng)
    return x
