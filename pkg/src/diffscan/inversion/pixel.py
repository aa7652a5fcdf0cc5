"""Pixel-space baseline: the same guidance objective optimized directly on an image tensor (no generator)."""

from __future__ import annotations

import numpy as np

from .guidance import (
    GuidanceConfig,
    _check_pairs,
    classifier_conf_fn,
    classifier_grad_fn,
    injected_noise,
    invert_pairs,
)


def pixel_pass(f, src, tar, cfg: GuidanceConfig, rngs, step_sizes: np.ndarray) -> np.ndarray:
    """Projected gradient ascent from ``clip(N(0, I))`` using step ``guidance_scale * step_sizes[t]``."""
    grad_fn = classifier_grad_fn(f, cfg)
    x = np.clip(np.stack([r.standard_normal(f.input_shape) for r in rngs]), -1.0, 1.0)
    for t in range(cfg.T, 0, -1):
        etas = [injected_noise(cfg, t, f.input_shape, r) for r in rngs]
        x_in = x
        if etas[0] is not None and cfg.noise_in_input:
            x_in = x + np.stack(etas)
        step = x + cfg.guidance_scale * step_sizes[t] * grad_fn(x_in, src, tar)
        if etas[0] is not None and cfg.noise_in_mean:
            step = step + np.stack(etas)
        x = np.clip(step, -1.0, 1.0)
    return x


def pixel_inverter(f, schedule):
    """Inverter for scans; step sizes follow the diffusion schedule's ``beta_t`` for an equal budget."""

    def inv(pairs, cfg: GuidanceConfig, seed: int):
        if schedule.T != cfg.T:
            raise ValueError(f"schedule has T={schedule.T} steps but config asks for T={cfg.T}")
        if pairs:
            _check_pairs(f.num_classes, np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))

        def pass_fn(src, tar, rngs):
            return pixel_pass(f, src, tar, cfg, rngs, schedule.beta)

        return invert_pairs(pairs, cfg, seed, pass_fn, classifier_conf_fn(f))

    return inv
