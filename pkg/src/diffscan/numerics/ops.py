"""Layer primitives: conv2d, dense, average pooling, flatten, softmax and losses.

Image tensors are ``[C, H, W]`` or batched ``[N, C, H, W]``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    pad: int = 0,
) -> Tensor:
    """2-D cross-correlation with zero padding.

    Output spatial size is ``floor((H + 2*pad - k) / stride) + 1``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: expected [N,C,H,W] input and [F,C,k,k] kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = xd.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {kc}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")

    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    kd = kernel.data
    out = np.tensordot(win, kd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents: tuple[Tensor, ...] = (x, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (f,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({f},)")
        out = out + bias.data[None, :, None, None]
        parents = parents + (bias,)
    if single:
        out = out[0]

    def backward(g):
        g4 = g[None] if single else g
        gk = np.tensordot(g4, win, axes=([0, 2, 3], [0, 2, 3])) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            dwin = np.tensordot(g4, kd, axes=([1], [0]))  # [N, Ho, Wo, C, k, k]
            gxp = np.zeros(xp.shape)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dwin[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
            if single:
                gx = gx[0]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return grads

    return Tensor._result(out, parents, backward, "conv2d")


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for ``x`` of shape ``[D]`` or ``[N, D]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    single = x.ndim == 1
    xd = x.data[None] if single else x.data
    if xd.ndim != 2 or weight.ndim != 2 or weight.shape[1] != xd.shape[1]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    wd = weight.data
    out = xd @ wd.T
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (wd.shape[0],):
            raise ShapeError(f"dense: bias shape {bias.shape} != ({wd.shape[0]},)")
        out = out + bias.data
        parents = parents + (bias,)
    if single:
        out = out[0]

    def backward(g):
        g2 = g[None] if single else g
        gx = g2 @ wd
        grads = [gx[0] if single else gx, g2.T @ xd]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return Tensor._result(out, parents, backward, "dense")


def avg_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping average pooling; H and W must be divisible by ``size``."""
    x = as_tensor(x)
    shape = x.shape
    h, w = shape[-2], shape[-1]
    if h % size or w % size:
        raise ShapeError(f"avg_pool2d: spatial size {h}x{w} not divisible by {size}")
    lead = shape[:-2]
    blocks = x.data.reshape(*lead, h // size, size, w // size, size)
    out = blocks.mean(axis=(-3, -1))
    scale = 1.0 / (size * size)

    def backward(g):
        up = np.repeat(np.repeat(g, size, axis=-2), size, axis=-1)
        return (up * scale,)

    return Tensor._result(out, (x,), backward, "avg_pool2d")


def flatten(x: Tensor, batched: bool = True) -> Tensor:
    """Collapse all but the leading (batch) axis; with ``batched=False`` collapse everything."""
    x = as_tensor(x)
    new = (x.shape[0], -1) if batched else (-1,)
    return x.reshape(new)


def softmax(logits: Tensor) -> Tensor:
    """Softmax over the last axis with max-shift."""
    logits = as_tensor(logits)
    if logits.shape[-1] < 2:
        raise ShapeError(f"softmax needs at least 2 classes, got {logits.shape[-1]}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor._result(p, (logits,), backward, "softmax")


def log_softmax(logits: Tensor) -> Tensor:
    logits = as_tensor(logits)
    if logits.shape[-1] < 2:
        raise ShapeError(f"log_softmax needs at least 2 classes, got {logits.shape[-1]}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return Tensor._result(out, (logits,), backward, "log_softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    k = logits.shape[1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"cross_entropy: labels must lie in [0, {k})")
    ls = log_softmax(logits)
    n = logits.shape[0]
    picked = ls[np.arange(n), labels]
    return -picked.mean()


def softmax_np(logits: np.ndarray) -> np.ndarray:
    """Untracked softmax for evaluation paths."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
