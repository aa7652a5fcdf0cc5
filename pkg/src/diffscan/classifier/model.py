"""Architecture specs and the immutable classifier value object."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..numerics import Tensor, softmax_np
from ..numerics import nn


@dataclass(frozen=True)
class ArchSpec:
    input_shape: tuple[int, ...]
    layers: tuple[dict, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(dict(layer) for layer in self.layers))
        last = self.layers[-1] if self.layers else {}
        if last.get("kind") != "dense" or last.get("units") != self.num_classes:
            raise ValueError(f"last layer must be dense with {self.num_classes} units, got {last}")
        if self.penultimate_index < 0:
            raise ValueError("architecture has no penultimate layer")

    @property
    def penultimate_index(self) -> int:
        """Index of the layer whose output feeds the final dense layer."""
        return len(self.layers) - 2

    def network(self) -> nn.Sequential:
        return nn.Sequential(self.input_shape, self.layers)

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [dict(x) for x in self.layers],
                "num_classes": self.num_classes}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(tuple(d["input_shape"]), tuple(d["layers"]), int(d["num_classes"]))


def default_arch(num_classes: int = 4, input_shape=(1, 16, 16), width: int = 8, hidden: int = 32) -> ArchSpec:
    return ArchSpec(
        input_shape,
        (
            nn.conv(width, 3, 1, 1), nn.RELU, nn.avgpool(2),
            nn.conv(2 * width, 3, 1, 1), nn.RELU, nn.avgpool(2),
            nn.FLATTEN,
            nn.dense(hidden), nn.RELU,
            nn.dense(num_classes),
        ),
        num_classes,
    )


class Classifier:
    """Trained network ``f : X -> R^K`` with frozen float64 parameters."""

    def __init__(self, arch: ArchSpec, params: Sequence[np.ndarray]):
        self.arch = arch
        self.net = arch.network()
        params = [np.array(p, dtype=np.float64) for p in params]
        self.net.check_params(params)
        for p in params:
            p.setflags(write=False)
        self.params = tuple(params)

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.arch.input_shape

    def forward(self, x: Tensor, params: Sequence[Tensor] | None = None) -> Tensor:
        if params is None:
            params = [Tensor(p) for p in self.params]
        out, _ = self.net.forward(params, x)
        return out

    def _run(self, x: np.ndarray, tap: int | None = None, chunk: int = 2048) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.shape == self.input_shape
        xb = x[None] if single else x
        params = [Tensor(p) for p in self.params]
        outs = []
        for i in range(0, xb.shape[0], chunk):
            out, taps = self.net.forward(params, Tensor(xb[i : i + chunk]), capture=None if tap is None else [tap])
            outs.append((out if tap is None else taps[tap]).data)
        res = np.concatenate(outs) if outs else np.zeros((0,) + self.net.output_shape)
        return res[0] if single else res

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self._run(x)

    def probs(self, x: np.ndarray) -> np.ndarray:
        return softmax_np(self.logits(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=-1)

    def features(self, x: np.ndarray) -> np.ndarray:
        """Penultimate-layer activations."""
        return self._run(x, tap=self.arch.penultimate_index)

    def with_params(self, params: Sequence[np.ndarray]) -> "Classifier":
        return Classifier(self.arch, params)

    def rounded(self) -> "Classifier":
        """Copy with weights rounded through float32, matching what serialization stores."""
        return Classifier(self.arch, [p.astype(np.float32).astype(np.float64) for p in self.params])
