"""Sequential networks built from the fixed layer catalog, plus an Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor, relu

LAYER_KINDS = ("conv2d", "dense", "relu", "avgpool", "flatten")


def conv(filters: int, kernel: int = 3, stride: int = 1, pad: int = 1) -> dict:
    return {"kind": "conv2d", "filters": filters, "kernel": kernel, "stride": stride, "pad": pad}


def dense(units: int) -> dict:
    return {"kind": "dense", "units": units}


def avgpool(size: int = 2) -> dict:
    return {"kind": "avgpool", "size": size}


RELU = {"kind": "relu"}
FLATTEN = {"kind": "flatten"}


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]


class Sequential:
    """A stack of layers described by plain dicts (JSON-serializable).

    The network itself holds no weights; parameters are passed to
    :meth:`forward` so that trained models stay immutable value objects.
    """

    def __init__(self, input_shape: Sequence[int], layers: Sequence[dict]):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = [dict(layer) for layer in layers]
        self.param_specs: list[ParamSpec] = []
        self.output_shapes: list[tuple[int, ...]] = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            kind = layer.get("kind")
            if kind not in LAYER_KINDS:
                raise ValueError(f"unknown layer kind {kind!r} (expected one of {LAYER_KINDS})")
            if kind == "conv2d":
                if len(shape) != 3:
                    raise ShapeError(f"layer {i}: conv2d needs [C,H,W] input, got {shape}")
                c, h, w = shape
                k, s, p, f = layer["kernel"], layer.get("stride", 1), layer.get("pad", 0), layer["filters"]
                if k > h + 2 * p or k > w + 2 * p:
                    raise ShapeError(f"layer {i}: kernel {k} larger than padded input {shape}")
                self.param_specs += [ParamSpec(f"l{i}.weight", (f, c, k, k)), ParamSpec(f"l{i}.bias", (f,))]
                shape = (f, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)
            elif kind == "dense":
                if len(shape) != 1:
                    raise ShapeError(f"layer {i}: dense needs flat input, got {shape}")
                u = layer["units"]
                self.param_specs += [ParamSpec(f"l{i}.weight", (u, shape[0])), ParamSpec(f"l{i}.bias", (u,))]
                shape = (u,)
            elif kind == "avgpool":
                size = layer.get("size", 2)
                if shape[-1] % size or shape[-2] % size:
                    raise ShapeError(f"layer {i}: avgpool {size} does not divide {shape}")
                shape = shape[:-2] + (shape[-2] // size, shape[-1] // size)
            elif kind == "flatten":
                shape = (int(np.prod(shape)),)
            self.output_shapes.append(shape)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.output_shapes[-1] if self.output_shapes else self.input_shape

    def init_params(self, rng: np.random.Generator) -> list[np.ndarray]:
        """He-normal weights, zero biases, in declaration order."""
        params = []
        for spec in self.param_specs:
            if spec.name.endswith(".bias"):
                params.append(np.zeros(spec.shape))
            else:
                fan_in = int(np.prod(spec.shape[1:]))
                params.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=spec.shape))
        return params

    def check_params(self, params: Sequence[np.ndarray]) -> None:
        if len(params) != len(self.param_specs):
            raise ShapeError(f"expected {len(self.param_specs)} parameter arrays, got {len(params)}")
        for spec, p in zip(self.param_specs, params):
            if tuple(np.shape(p)) != spec.shape:
                raise ShapeError(f"parameter {spec.name}: shape {np.shape(p)} != {spec.shape}")

    def forward(
        self,
        params: Sequence[Tensor],
        x: Tensor,
        capture: Optional[Iterable[int]] = None,
    ) -> tuple[Tensor, dict[int, Tensor]]:
        """Run the stack on a batched input ``[N, *input_shape]``.

        Returns the output and the activations after every layer index in ``capture``.
        """
        want = set(capture or ())
        taps: dict[int, Tensor] = {}
        it = iter(params)
        h = x
        for i, layer in enumerate(self.layers):
            kind = layer["kind"]
            if kind == "conv2d":
                w, b = next(it), next(it)
                h = ops.conv2d(h, w, b, stride=layer.get("stride", 1), pad=layer.get("pad", 0))
            elif kind == "dense":
                w, b = next(it), next(it)
                h = ops.dense(h, w, b)
            elif kind == "relu":
                h = relu(h)
            elif kind == "avgpool":
                h = ops.avg_pool2d(h, layer.get("size", 2))
            elif kind == "flatten":
                h = ops.flatten(h)
            if i in want:
                taps[i] = h
        return h, taps


class Adam:
    """Adam over a list of numpy arrays updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: Sequence[Optional[np.ndarray]]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                continue
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
