"""Variance schedules and the closed-form forward (noising) marginal."""

from __future__ import annotations

import numpy as np

BETA_CAP = 0.999


class NoiseSchedule:
    """Per-step variances ``beta_1..beta_T`` with derived ``alpha`` and ``alpha_bar``.

    Arrays are indexed by step ``t`` directly: index 0 holds ``alpha_bar_0 = 1``
    (and a placeholder ``beta_0 = 0``), so ``alpha_bar[t]`` needs no offset.
    """

    def __init__(self, betas):
        b = np.asarray(betas, dtype=np.float64)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("betas must be a nonempty 1-D sequence")
        if not (b[0] > 0 and b[-1] < 1):
            raise ValueError(f"betas must lie in (0, 1), got range [{b.min()}, {b.max()}]")
        if np.any(np.diff(b) < 0):
            raise ValueError("betas must be non-decreasing")
        self.T = int(b.size)
        self.beta = np.concatenate([[0.0], b])
        self.alpha = 1.0 - self.beta
        self.alpha_bar = np.cumprod(self.alpha)
        for arr in (self.beta, self.alpha, self.alpha_bar):
            arr.setflags(write=False)

    @classmethod
    def linear(cls, T: int = 50) -> "NoiseSchedule":
        """Linear betas rescaled from the 1000-step reference range so alpha_bar_T is preserved."""
        if T < 1:
            raise ValueError(f"T must be >= 1, got {T}")
        scale = 1000.0 / T
        betas = np.linspace(1e-4 * scale, 0.02 * scale, T)
        return cls(np.minimum(betas, BETA_CAP))

    def check_t(self, t: int, allow_zero: bool = True) -> int:
        lo = 0 if allow_zero else 1
        if not lo <= int(t) <= self.T or int(t) != t:
            raise ValueError(f"step t={t} outside [{lo}, {self.T}]")
        return int(t)

    def __eq__(self, other) -> bool:
        return isinstance(other, NoiseSchedule) and np.array_equal(self.beta, other.beta)

    def __repr__(self) -> str:
        return f"NoiseSchedule(T={self.T}, beta=[{self.beta[1]:.4g}..{self.beta[-1]:.4g}])"


def forward_sample(schedule: NoiseSchedule, x0: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
    """``x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps``."""
    t = schedule.check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"noise shape {eps.shape} != image shape {x0.shape}")
    if t == 0:
        return x0.copy()
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
