"""Classifier-guided reverse diffusion for trigger inversion, with validity gating and retries."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ..numerics import LogitObjective, grad_wrt_input
from ..diffusion import draw, initial_noise, reverse_moments

NOISE_MODES = ("mean-additive", "classifier-input", "both")

# attempt k of pair (s, t) draws from default_rng([seed + k * RETRY_PRIME, s, t])
RETRY_PRIME = 1_000_003


@dataclass(frozen=True)
class GuidanceConfig:
    """Inversion hyperparameters.

    ``hybrid`` optionally maps a class index to a batch of clean images of
    that class; when set, guidance gradients are taken on the candidate
    composed with source images rather than on the candidate alone.
    """

    lambda1: float = 0.3
    lambda2_valid: float = 0.95
    lambda2_detect: float = 0.5
    T: int = 50
    max_retries: int = 5
    noise_mode: str = "both"
    t_scaling: bool = True
    guidance_scale: float = 1.0
    seed: int = 0
    hybrid: Optional[Mapping[int, np.ndarray]] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.lambda1 >= 0:
            raise ValueError(f"lambda1 must be >= 0, got {self.lambda1}")
        if not 0.0 < self.lambda2_valid < 1.0:
            raise ValueError(f"lambda2_valid must lie in (0, 1), got {self.lambda2_valid}")
        if int(self.max_retries) < 1:
            raise ValueError(f"max_retries must be >= 1, got {self.max_retries}")
        if int(self.T) < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}, got {self.noise_mode!r}")
        if not self.guidance_scale >= 0:
            raise ValueError(f"guidance_scale must be >= 0, got {self.guidance_scale}")

    def replace(self, **changes) -> "GuidanceConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return GuidanceConfig(**values)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "hybrid"}
        d["hybrid"] = self.hybrid is not None
        return d

    @property
    def noise_in_mean(self) -> bool:
        return self.noise_mode in ("mean-additive", "both")

    @property
    def noise_in_input(self) -> bool:
        return self.noise_mode in ("classifier-input", "both")


@dataclass
class TriggerCandidate:
    pattern: np.ndarray
    y_src: int
    y_tar: int
    confidence: float
    retries_used: int


@dataclass
class Failure:
    """All attempts for a pair missed the validity gate; ``best_confidence`` is the highest seen."""

    y_src: int
    y_tar: int
    retries_used: int
    best_confidence: float


# grad_fn(x_in [P, ...], src [P], tar [P]) -> guidance gradient [P, ...]
GradFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
# conf_fn(x0 [P, ...], tar [P]) -> target-class confidence [P]
ConfFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def classifier_grad_fn(f, cfg: GuidanceConfig) -> GradFn:
    """Gradient of ``logit_tar - logit_src``; composed with source images under hybrid conditioning."""

    def plain(x_in, src, tar):
        return grad_wrt_input(f, x_in, LogitObjective(src, tar))

    if cfg.hybrid is None:
        return plain

    def hybrid(x_in, src, tar):
        out = np.empty_like(x_in)
        for p in range(x_in.shape[0]):
            batch = np.asarray(cfg.hybrid[int(src[p])], dtype=np.float64)
            if batch.shape[0] == 0:
                raise ValueError(f"hybrid conditioning has no images of class {int(src[p])}")
            z = batch + x_in[p]
            inside = (z > -1.0) & (z < 1.0)
            g = grad_wrt_input(f, np.clip(z, -1.0, 1.0), LogitObjective(src[p], tar[p]))
            out[p] = np.mean(g * inside, axis=0)
        return out

    return hybrid


def classifier_conf_fn(f) -> ConfFn:
    def conf(x0, tar):
        return f.probs(x0)[np.arange(x0.shape[0]), tar]

    return conf


def _check_pairs(num_classes: int, src: np.ndarray, tar: np.ndarray) -> None:
    for s, t in zip(src, tar):
        if s == t:
            raise ValueError(f"source and target class must differ, got {s} -> {t}")
        if not (0 <= s < num_classes and 0 <= t < num_classes):
            raise ValueError(f"pair {s} -> {t} outside [0, {num_classes})")


def injected_noise(cfg: GuidanceConfig, t: int, shape, rng: np.random.Generator) -> Optional[np.ndarray]:
    """``lambda1 * (t / T) * U(0, 1)`` per coordinate, or None when lambda1 = 0 (no draw)."""
    if cfg.lambda1 == 0:
        return None
    factor = t / cfg.T if cfg.t_scaling else 1.0
    return cfg.lambda1 * factor * rng.uniform(0.0, 1.0, size=shape)


def guided_steps(model, x: np.ndarray, t: int, src: np.ndarray, tar: np.ndarray, cfg: GuidanceConfig,
                 rngs: Sequence[np.random.Generator], grad_fn: GradFn) -> np.ndarray:
    """One guided reverse transition for a batch of independent pairs, each with its own rng."""
    m = reverse_moments(model, x, t)
    mean = m.mean
    etas = [injected_noise(cfg, t, model.shape, r) for r in rngs]
    if cfg.guidance_scale != 0:
        x_in = x
        if etas[0] is not None and cfg.noise_in_input:
            x_in = x + np.stack(etas)
        g = grad_fn(x_in, src, tar)
        mean = mean + cfg.guidance_scale * model.schedule.beta[t] * g
    if etas[0] is not None and cfg.noise_in_mean:
        mean = mean + np.stack(etas)
    return np.stack([draw(m, mean[p], r) for p, r in enumerate(rngs)])


def guided_reverse_step(model, f, x_t: np.ndarray, t: int, y_src: int, y_tar: int, cfg: GuidanceConfig,
                        rng: np.random.Generator) -> np.ndarray:
    """Single-image guided transition ``x_t -> x_{t-1}``.

    The reverse mean is shifted by ``guidance_scale * beta_t * grad(logit_tar - logit_src)``
    plus the injected uniform noise; the draw then uses the unguided variance.
    """
    if y_src == y_tar:
        raise ValueError(f"source and target class must differ, got {y_src} -> {y_tar}")
    model.schedule.check_t(t, allow_zero=False)
    src, tar = np.array([y_src]), np.array([y_tar])
    _check_pairs(f.num_classes, src, tar)
    return guided_steps(model, x_t[None], t, src, tar, cfg, [rng], classifier_grad_fn(f, cfg))[0]


def attempt_rng(seed: int, attempt: int, y_src: int, y_tar: int) -> np.random.Generator:
    return np.random.default_rng([seed + attempt * RETRY_PRIME, int(y_src), int(y_tar)])


def _check_schedule(model, cfg: GuidanceConfig) -> None:
    if model.schedule.T != cfg.T:
        raise ValueError(f"denoiser has T={model.schedule.T} steps but config asks for T={cfg.T}")


def _guided_pass(model, src, tar, cfg, rngs, grad_fn) -> np.ndarray:
    x = np.stack([initial_noise(model, None, r) for r in rngs])
    for t in range(model.schedule.T, 0, -1):
        x = guided_steps(model, x, t, src, tar, cfg, rngs, grad_fn)
    return np.clip(x, -1.0, 1.0)


# pass_fn(src [P], tar [P], rngs) -> x0 [P, ...]
PassFn = Callable[[np.ndarray, np.ndarray, Sequence[np.random.Generator]], np.ndarray]


def invert_pairs(pairs: Sequence[tuple[int, int]], cfg: GuidanceConfig, seed: int, pass_fn: PassFn,
                 conf_fn: ConfFn) -> list:
    """Run the gated retry loop for many pairs at once.

    Attempt k re-runs only the still-failing pairs with fresh per-pair seeds.
    Returns a TriggerCandidate or Failure per pair, in input order.
    """
    results: list = [None] * len(pairs)
    best = np.full(len(pairs), -np.inf)
    pending = list(range(len(pairs)))
    for attempt in range(cfg.max_retries):
        if not pending:
            break
        src = np.array([pairs[i][0] for i in pending])
        tar = np.array([pairs[i][1] for i in pending])
        rngs = [attempt_rng(seed, attempt, s, t) for s, t in zip(src, tar)]
        x0 = pass_fn(src, tar, rngs)
        conf = conf_fn(x0, tar)
        still = []
        for j, i in enumerate(pending):
            best[i] = max(best[i], conf[j])
            if conf[j] >= cfg.lambda2_valid:
                results[i] = TriggerCandidate(x0[j], int(src[j]), int(tar[j]), float(conf[j]), attempt + 1)
            else:
                still.append(i)
        pending = still
    for i in pending:
        results[i] = Failure(int(pairs[i][0]), int(pairs[i][1]), cfg.max_retries, float(best[i]))
    return results


def invert_many(model, f, pairs: Sequence[tuple[int, int]], cfg: GuidanceConfig, seed: int) -> list:
    _check_schedule(model, cfg)
    if pairs:
        _check_pairs(f.num_classes, np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))
    grad_fn = classifier_grad_fn(f, cfg)

    def pass_fn(src, tar, rngs):
        return _guided_pass(model, src, tar, cfg, rngs, grad_fn)

    return invert_pairs(pairs, cfg, seed, pass_fn, classifier_conf_fn(f))


def invert_trigger(model, f, y_src: int, y_tar: int, cfg: GuidanceConfig, seed: int):
    """Guided sampling from ``x_T ~ N(0, I)`` repeated until the target confidence passes the gate."""
    return invert_many(model, f, [(y_src, y_tar)], cfg, seed)[0]

