"""Input gradients of logit-difference objectives and central finite-difference checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence, Union

import numpy as np

from .tensor import Tensor

Labels = Union[int, np.ndarray, Sequence[int]]

# Denominator floor for per-coordinate relative error; coordinates whose
# gradients are both below it are effectively compared in absolute terms.
REL_FLOOR = 1e-6


class Differentiable(Protocol):
    num_classes: int

    def forward(self, x: Tensor) -> Tensor:
        """Batched logits ``[N, K]`` for inputs ``[N, ...]``."""


@dataclass(frozen=True)
class LogitObjective:
    """``logit[y_tar] - logit[y_src]``; labels may be per-sample arrays for batches."""

    y_src: Labels
    y_tar: Labels

    def validate(self, num_classes: int, batch: int) -> tuple[np.ndarray, np.ndarray]:
        src = np.broadcast_to(np.asarray(self.y_src, dtype=np.int64), (batch,))
        tar = np.broadcast_to(np.asarray(self.y_tar, dtype=np.int64), (batch,))
        for name, lab in (("y_src", src), ("y_tar", tar)):
            if lab.min() < 0 or lab.max() >= num_classes:
                raise ValueError(f"{name} out of range [0, {num_classes}): {lab.tolist()}")
        if np.any(src == tar):
            raise ValueError("objective needs y_src != y_tar")
        return src, tar


def _batched(f: Differentiable, x: np.ndarray) -> tuple[np.ndarray, bool]:
    in_shape = tuple(getattr(f, "input_shape", x.shape))
    single = x.shape == in_shape
    return (x[None] if single else x), single


def objective_value(f: Differentiable, x: np.ndarray, objective: LogitObjective) -> np.ndarray:
    xb, single = _batched(f, np.asarray(x, dtype=np.float64))
    src, tar = objective.validate(f.num_classes, xb.shape[0])
    logits = f.forward(Tensor(xb)).data
    idx = np.arange(xb.shape[0])
    vals = logits[idx, tar] - logits[idx, src]
    return vals[0] if single else vals


def grad_wrt_input(f: Differentiable, x: np.ndarray, objective: LogitObjective) -> np.ndarray:
    """Gradient of ``logit_tar(x) - logit_src(x)`` with respect to ``x``.

    For a batch the objective is summed, which yields per-sample gradients
    because samples do not interact.
    """
    xb, single = _batched(f, np.asarray(x, dtype=np.float64))
    src, tar = objective.validate(f.num_classes, xb.shape[0])
    xt = Tensor(xb, requires_grad=True)
    logits = f.forward(xt)
    n, k = logits.shape
    seed = np.zeros((n, k))
    idx = np.arange(n)
    seed[idx, tar] += 1.0
    seed[idx, src] -= 1.0
    logits.backward(seed)
    g = xt.grad if xt.grad is not None else np.zeros_like(xb)
    return g[0] if single else g


def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Largest per-coordinate ``|a - n| / max(|a|, |n|, floor)``."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def finite_diff_report(f: Differentiable, x: np.ndarray, objective: LogitObjective, h: float = 1e-4) -> float:
    """Max relative error between :func:`grad_wrt_input` and central differences."""
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    analytic = grad_wrt_input(f, x, objective)

    def scalar(z):
        return float(np.sum(objective_value(f, z, objective)))

    numeric = numeric_gradient(scalar, x, h)
    return max_relative_error(analytic, numeric)


def relu_pattern(net, params: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    """On/off state of every ReLU unit of ``net`` at input ``x`` (flattened, one sample)."""
    idx = [i for i, layer in enumerate(net.layers) if layer["kind"] == "relu"]
    _, taps = net.forward([Tensor(p) for p in params[: len(net.param_specs)]], Tensor(np.asarray(x)[None]), idx)
    return np.concatenate([taps[i].data.reshape(-1) > 0 for i in idx]) if idx else np.zeros(0, dtype=bool)


def stencil_kinks(pattern: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Coordinates whose central-difference stencil ``x +- h e_i`` changes the ReLU pattern.

    A piecewise-linear network is not differentiable across such a change, so
    central differences there measure a secant, not the gradient at ``x``.
    """
    x = np.array(x, dtype=np.float64)
    base = pattern(x)
    out = np.zeros(x.shape, dtype=bool)
    flat, oflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        for step in (h, -h):
            flat[i] = orig + step
            if not np.array_equal(pattern(x), base):
                oflat[i] = True
        flat[i] = orig
    return out
