"""Denoiser backends: exact Gaussian-mixture score and a learned epsilon-predictor."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..numerics import Adam, NonFiniteError, Sequential, Tensor, concat, tmean
from ..numerics import nn
from .schedule import NoiseSchedule


def _steps(schedule: NoiseSchedule, t, batch: int) -> np.ndarray:
    t_arr = np.broadcast_to(np.asarray(t), (batch,))
    if np.any(t_arr < 0) or np.any(t_arr > schedule.T) or np.any(t_arr != np.round(t_arr)):
        raise ValueError(f"steps must be integers in [0, {schedule.T}]")
    return t_arr.astype(np.int64)


@dataclass(frozen=True)
class GaussianMixture:
    """``sum_i w_i N(mu_i, var I)`` over images (or vectors) of a fixed shape."""

    weights: np.ndarray
    means: np.ndarray
    var: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        if w.ndim != 1 or w.size != mu.shape[0]:
            raise ValueError(f"{w.size} weights for {mu.shape[0]} components")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be positive and sum to 1")
        if not self.var > 0:
            raise ValueError(f"component variance must be positive, got {self.var}")
        w.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "var", float(self.var))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.means.shape[1:])

    def sample_labeled(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        comp = rng.choice(self.weights.size, size=n, p=self.weights)
        x = self.means[comp] + np.sqrt(self.var) * rng.standard_normal((n,) + self.shape)
        return x, comp

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_labeled(n, rng)[0]


class MixtureDenoiser:
    """Analytic backend: the noised marginal of a Gaussian mixture is again a mixture,

    ``p_t = sum_i w_i N(sqrt(ab_t) mu_i, (ab_t var + 1 - ab_t) I)``, so its score is exact.
    """

    backend = "analytic"

    def __init__(self, mixture: GaussianMixture, schedule: NoiseSchedule):
        self.mixture = mixture
        self.schedule = schedule
        self.shape = mixture.shape

    def _terms(self, x: np.ndarray, t):
        x = np.asarray(x, dtype=np.float64)
        single = x.shape == self.shape
        xb = (x[None] if single else x).reshape(-1, int(np.prod(self.shape)))
        ab = self.schedule.alpha_bar[_steps(self.schedule, t, xb.shape[0])]
        a = np.sqrt(ab)[:, None, None]
        v = (ab * self.mixture.var + 1.0 - ab)[:, None]
        mu = self.mixture.means.reshape(self.mixture.weights.size, -1)[None]
        diff = xb[:, None, :] - a * mu  # [B, M, D]
        logits = np.log(self.mixture.weights)[None] - 0.5 * np.einsum("bmd,bmd->bm", diff, diff) / v
        return single, xb, a, v, mu, logits

    def score(self, x: np.ndarray, t) -> np.ndarray:
        """``grad_x log p_t(x)`` with log-sum-exp stabilized responsibilities."""
        single, xb, a, v, mu, logits = self._terms(x, t)
        r = np.exp(logits - logits.max(axis=1, keepdims=True))
        r /= r.sum(axis=1, keepdims=True)
        out = (np.einsum("bm,bmd->bd", r, a * mu) - xb) / v
        out = out.reshape((-1,) + self.shape)
        return out[0] if single else out

    def log_prob(self, x: np.ndarray, t) -> np.ndarray:
        single, xb, _, v, _, logits = self._terms(x, t)
        m = logits.max(axis=1, keepdims=True)
        lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))[:, 0]
        out = lse - 0.5 * xb.shape[1] * np.log(2 * np.pi * v[:, 0])
        return out[0] if single else out

    def eps(self, x: np.ndarray, t) -> np.ndarray:
        """Implied noise prediction ``-sqrt(1 - ab_t) * score``."""
        x = np.asarray(x, dtype=np.float64)
        n = 1 if x.shape == self.shape else x.shape[0]
        ab = self.schedule.alpha_bar[_steps(self.schedule, t, n)]
        scale = np.sqrt(1.0 - ab).reshape((-1,) + (1,) * len(self.shape))
        s = self.score(x, t)
        return -(scale[0] if x.shape == self.shape else scale) * s


def time_embedding(t: np.ndarray, T: int, dim: int) -> np.ndarray:
    """Sinusoidal features of ``t / T`` at integer frequencies 1..dim/2."""
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    u = np.asarray(t, dtype=np.float64)[:, None] / T
    freqs = np.pi * np.arange(1, dim // 2 + 1)[None]
    return np.concatenate([np.sin(freqs * u), np.cos(freqs * u)], axis=1)


@dataclass(frozen=True)
class DenoiserHyper:
    steps: int = 3000
    batch: int = 256
    lr: float = 2e-3
    seed: int = 0
    hidden: tuple[int, ...] = (128, 128, 128)
    emb_dim: int = 16


class LearnedDenoiser:
    """MLP epsilon-predictor on flattened ``[x_t, embed(t)]``."""

    backend = "learned"

    def __init__(self, shape: Sequence[int], schedule: NoiseSchedule, params: Sequence[np.ndarray],
                 hidden: Sequence[int] = (128, 128, 128), emb_dim: int = 16):
        self.shape = tuple(int(s) for s in shape)
        self.schedule = schedule
        self.hidden = tuple(int(h) for h in hidden)
        self.emb_dim = int(emb_dim)
        self.net = self.network(self.shape, self.hidden, self.emb_dim)
        params = [np.array(p, dtype=np.float64) for p in params]
        self.net.check_params(params)
        for p in params:
            p.setflags(write=False)
        self.params = tuple(params)

    @staticmethod
    def network(shape, hidden, emb_dim) -> Sequential:
        d = int(np.prod(shape))
        layers = []
        for h in hidden:
            layers += [nn.dense(h), nn.RELU]
        layers.append(nn.dense(d))
        return Sequential((d + emb_dim,), layers)

    def _forward(self, params, x: np.ndarray, t: np.ndarray) -> Tensor:
        flat = Tensor(x.reshape(x.shape[0], -1))
        emb = Tensor(time_embedding(t, self.schedule.T, self.emb_dim))
        out, _ = self.net.forward(params, concat([flat, emb], axis=1))
        return out

    def eps(self, x: np.ndarray, t) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.shape == self.shape
        xb = x[None] if single else x
        steps = _steps(self.schedule, t, xb.shape[0])
        out = self._forward([Tensor(p) for p in self.params], xb, steps).data.reshape(xb.shape)
        return out[0] if single else out

    def score(self, x: np.ndarray, t) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        n = 1 if x.shape == self.shape else x.shape[0]
        ab = self.schedule.alpha_bar[_steps(self.schedule, t, n)]
        if np.any(ab >= 1.0):
            raise ValueError("score is undefined at t = 0 for the learned backend")
        scale = np.sqrt(1.0 - ab).reshape((-1,) + (1,) * len(self.shape))
        return -self.eps(x, t) / (scale[0] if x.shape == self.shape else scale)


def simple_loss(model: LearnedDenoiser, x0: np.ndarray, t: np.ndarray, eps: np.ndarray, params=None) -> Tensor:
    """``mean ||eps - eps_theta(x_t, t)||^2`` per coordinate."""
    ab = model.schedule.alpha_bar[t].reshape((-1,) + (1,) * len(model.shape))
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    params = [Tensor(p) for p in model.params] if params is None else params
    pred = model._forward(params, xt, t)
    diff = pred - Tensor(eps.reshape(eps.shape[0], -1))
    return tmean(diff * diff)


def train_denoiser(sample_x0: Callable[[int, np.random.Generator], np.ndarray], shape, schedule: NoiseSchedule,
                   hyper: DenoiserHyper = DenoiserHyper()) -> LearnedDenoiser:
    """Fit an epsilon-predictor by minimizing the simple noise-prediction loss with Adam."""
    rng = np.random.default_rng([hyper.seed, 31])
    net = LearnedDenoiser.network(tuple(shape), hyper.hidden, hyper.emb_dim)
    params = net.init_params(rng)
    model = LearnedDenoiser(shape, schedule, params, hyper.hidden, hyper.emb_dim)
    if hyper.steps <= 0:
        return model
    opt = Adam(params, lr=hyper.lr)
    for step in range(hyper.steps):
        x0 = np.asarray(sample_x0(hyper.batch, rng), dtype=np.float64)
        t = rng.integers(1, schedule.T + 1, size=hyper.batch)
        eps = rng.standard_normal(x0.shape)
        tparams = [Tensor(p, requires_grad=True) for p in params]
        try:
            loss = simple_loss(model, x0, t, eps, tparams)
            loss.backward()
        except NonFiniteError as exc:
            raise FloatingPointError(f"denoiser loss became non-finite at step {step}: {exc}") from exc
        # cosine decay keeps the final fit tight without tuning a schedule per law
        opt.lr = hyper.lr * 0.5 * (1.0 + np.cos(np.pi * step / hyper.steps))
        opt.step([p.grad for p in tparams])
    return LearnedDenoiser(shape, schedule, params, hyper.hidden, hyper.emb_dim)


def mixture_from_law(law) -> GaussianMixture:
    """Equal-weight mixture over a data law's class prototypes with its pixel noise."""
    k = law.num_classes
    return GaussianMixture(np.full(k, 1.0 / k), law.prototypes, law.sigma**2)


def isotropic_prior(shape, var: float) -> GaussianMixture:
    """Single zero-mean component: a generic image prior that knows nothing about any class."""
    return GaussianMixture(np.ones(1), np.zeros((1,) + tuple(shape)), var)
