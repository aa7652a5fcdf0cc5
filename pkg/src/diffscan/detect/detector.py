"""Single-object desk scenes and a tiny detector with a class head and a sigmoid box head."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..numerics import Adam, NonFiniteError, Sequential, Tensor, cross_entropy, sigmoid, softmax_np, tmean
from ..numerics import nn
from ..numerics.ops import dense
from ..classifier.poison import CORNERS


@dataclass
class Scenes:
    """Images with one object each: class label and box ``[cx, cy, w, h]`` in normalized units."""

    images: np.ndarray
    labels: np.ndarray
    boxes: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.boxes = np.asarray(self.boxes, dtype=np.float64)
        n = self.images.shape[0]
        if self.labels.shape != (n,) or self.boxes.shape != (n, 4):
            raise ValueError(f"inconsistent scene arrays: {n} images, labels {self.labels.shape}, "
                             f"boxes {self.boxes.shape}")
        if self.boxes.size and (self.boxes.min() < 0 or self.boxes.max() > 1):
            raise ValueError("boxes must lie in [0, 1]")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, idx) -> "Scenes":
        idx = np.asarray(idx)
        return Scenes(self.images[idx], self.labels[idx], self.boxes[idx], self.num_classes)

    def of_class(self, y: int) -> "Scenes":
        return self.subset(np.flatnonzero(self.labels == y))


@dataclass(frozen=True)
class SceneLaw:
    """A class sprite pasted at one of ``grid x grid`` positions on a noisy background."""

    num_classes: int = 4
    shape: tuple[int, int, int] = (1, 16, 16)
    sprite: int = 8
    grid: int = 3
    sigma: float = 0.2
    amplitude: float = 0.9
    seed: int = 0
    sprites: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        c = self.shape[0]
        rng = np.random.default_rng([self.seed, 6007])
        sp = np.empty((self.num_classes, c, self.sprite, self.sprite))
        for k in range(self.num_classes):
            raw = rng.choice([-1.0, 1.0], size=(c, self.sprite, self.sprite))
            sp[k] = self.amplitude * raw
        sp.setflags(write=False)
        object.__setattr__(self, "sprites", sp)

    def offsets(self) -> np.ndarray:
        """Top-left pixel offsets of the grid positions (same along both axes)."""
        h = self.shape[1]
        return np.linspace(0, h - self.sprite, self.grid).round().astype(int)

    def sample(self, n: int, rng: np.random.Generator, labels: Optional[np.ndarray] = None) -> Scenes:
        c, h, w = self.shape
        labels = rng.integers(0, self.num_classes, size=n) if labels is None else np.asarray(labels)
        offs = self.offsets()
        rows = offs[rng.integers(0, self.grid, size=n)]
        cols = offs[rng.integers(0, self.grid, size=n)]
        images = rng.normal(0.0, self.sigma, size=(n, c, h, w))
        s = self.sprite
        for i in range(n):
            images[i, :, rows[i] : rows[i] + s, cols[i] : cols[i] + s] += self.sprites[labels[i]]
        boxes = np.stack([(cols + s / 2) / w, (rows + s / 2) / h, np.full(n, s / w), np.full(n, s / h)], axis=1)
        return Scenes(np.clip(images, -1.0, 1.0), labels, boxes, self.num_classes)

    def heldout_per_class(self, n: int, seed: int) -> dict[int, Scenes]:
        rng = np.random.default_rng([seed, 130363])
        return {y: self.sample(n, rng, labels=np.full(n, y)) for y in range(self.num_classes)}

    def to_dict(self) -> dict:
        return {"num_classes": self.num_classes, "shape": list(self.shape), "sprite": self.sprite,
                "grid": self.grid, "sigma": self.sigma, "amplitude": self.amplitude, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneLaw":
        return cls(int(d["num_classes"]), tuple(d["shape"]), int(d["sprite"]), int(d["grid"]),
                   float(d["sigma"]), float(d["amplitude"]), int(d["seed"]))


@dataclass(frozen=True)
class DetectorArch:
    input_shape: tuple[int, ...]
    backbone: tuple[dict, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "backbone", tuple(dict(x) for x in self.backbone))
        if len(self.network().output_shape) != 1:
            raise ValueError("detector backbone must end in a flat feature vector")

    def network(self) -> Sequential:
        return Sequential(self.input_shape, self.backbone)

    @property
    def feature_dim(self) -> int:
        return self.network().output_shape[0]

    def param_shapes(self) -> list[tuple[int, ...]]:
        f = self.feature_dim
        return [p.shape for p in self.network().param_specs] + [(self.num_classes, f), (self.num_classes,),
                                                                 (4, f), (4,)]

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "backbone": [dict(x) for x in self.backbone],
                "num_classes": self.num_classes}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorArch":
        return cls(tuple(d["input_shape"]), tuple(d["backbone"]), int(d["num_classes"]))


def default_detector_arch(num_classes: int = 4, input_shape=(1, 16, 16), width: int = 8,
                          hidden: int = 32) -> DetectorArch:
    return DetectorArch(
        input_shape,
        (
            nn.conv(width, 3, 1, 1), nn.RELU, nn.avgpool(2),
            nn.conv(2 * width, 3, 1, 1), nn.RELU, nn.avgpool(2),
            nn.FLATTEN, nn.dense(hidden), nn.RELU,
        ),
        num_classes,
    )


class Detector:
    """Shared backbone, class logits ``[K]`` and box ``[cx, cy, w, h]`` squashed into [0, 1]."""

    def __init__(self, arch: DetectorArch, params):
        self.arch = arch
        self.net = arch.network()
        params = [np.array(p, dtype=np.float64) for p in params]
        want = arch.param_shapes()
        if [p.shape for p in params] != [tuple(s) for s in want]:
            raise ValueError(f"detector parameter shapes {[p.shape for p in params]} != {want}")
        for p in params:
            p.setflags(write=False)
        self.params = tuple(params)

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.arch.input_shape

    def heads(self, x: Tensor, params=None) -> tuple[Tensor, Tensor]:
        params = [Tensor(p) for p in self.params] if params is None else params
        nb = len(self.net.param_specs)
        feats, _ = self.net.forward(params[:nb], x)
        wc, bc, wb, bb = params[nb:]
        return dense(feats, wc, bc), sigmoid(dense(feats, wb, bb))

    def forward(self, x: Tensor) -> Tensor:
        """Class logits only, so a detector can stand in wherever a classifier is expected."""
        return self.heads(x)[0]

    def _batched(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.shape == self.input_shape
        return (x[None] if single else x), single

    def logits(self, x) -> np.ndarray:
        xb, single = self._batched(x)
        out = self.heads(Tensor(xb))[0].data
        return out[0] if single else out

    def probs(self, x) -> np.ndarray:
        return softmax_np(self.logits(x))

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.logits(x), axis=-1)

    def boxes(self, x) -> np.ndarray:
        xb, single = self._batched(x)
        out = self.heads(Tensor(xb))[1].data
        return out[0] if single else out

    def rounded(self) -> "Detector":
        return Detector(self.arch, [p.astype(np.float32).astype(np.float64) for p in self.params])


@dataclass(frozen=True)
class DetectorTrainConfig:
    epochs: int = 12
    lr: float = 2e-3
    batch_size: int = 64
    seed: int = 0
    box_weight: float = 10.0


def train_detector(scenes: Scenes, arch: DetectorArch, hyper: DetectorTrainConfig) -> Detector:
    """Cross-entropy on the class head plus weighted squared error on the box head."""
    rng = np.random.default_rng([hyper.seed, 5])
    f = arch.feature_dim
    params = arch.network().init_params(rng) + [
        rng.normal(0.0, np.sqrt(2.0 / f), size=(arch.num_classes, f)), np.zeros(arch.num_classes),
        rng.normal(0.0, np.sqrt(1.0 / f), size=(4, f)), np.zeros(4),
    ]
    det = Detector(arch, params)
    if hyper.epochs <= 0:
        return det
    opt = Adam(params, lr=hyper.lr)
    n = len(scenes)
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        for i in range(0, n, hyper.batch_size):
            idx = order[i : i + hyper.batch_size]
            tparams = [Tensor(p, requires_grad=True) for p in params]
            try:
                logits, box = det.heads(Tensor(scenes.images[idx]), tparams)
                diff = box - Tensor(scenes.boxes[idx])
                loss = cross_entropy(logits, scenes.labels[idx]) + hyper.box_weight * tmean(diff * diff)
                loss.backward()
            except NonFiniteError as exc:
                raise FloatingPointError(f"detector training diverged at epoch {epoch}: {exc}") from exc
            opt.step([t.grad for t in tparams])
    return Detector(arch, params)


def detection_accuracy(det: Detector, scenes: Scenes) -> tuple[float, float]:
    """Class accuracy and mean box-center error."""
    acc = float(np.mean(det.predict(scenes.images) == scenes.labels))
    err = np.linalg.norm(det.boxes(scenes.images)[:, :2] - scenes.boxes[:, :2], axis=1)
    return acc, float(err.mean())


@dataclass(frozen=True)
class DetectorPoison:
    """Corner patch that flips the class to ``target`` and moves the box center into ``corner``."""

    pattern: np.ndarray
    mask: np.ndarray
    target: int
    corner: str
    rate: float
    box_center: tuple[float, float]

    def __post_init__(self):
        if self.corner not in CORNERS:
            raise ValueError(f"unknown corner {self.corner!r}")
        if not 0.0 < self.rate <= 0.5:
            raise ValueError(f"poison rate must lie in (0, 0.5], got {self.rate}")

    def stamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x * (1.0 - self.mask) + self.pattern * self.mask, -1.0, 1.0)

    def to_dict(self) -> dict:
        return {"pattern": np.asarray(self.pattern).tolist(), "mask": np.asarray(self.mask).tolist(),
                "target": self.target, "corner": self.corner, "rate": self.rate,
                "box_center": list(self.box_center)}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorPoison":
        return cls(np.asarray(d["pattern"]), np.asarray(d["mask"]), int(d["target"]), d["corner"],
                   float(d["rate"]), tuple(d["box_center"]))


def poison_scenes(scenes: Scenes, spec: DetectorPoison, seed: int) -> tuple[Scenes, np.ndarray]:
    n_poison = int(round(spec.rate * len(scenes)))
    if n_poison < 1:
        raise ValueError(f"rate {spec.rate} poisons no scene of a {len(scenes)}-scene set")
    rng = np.random.default_rng([seed, 15485863])
    pool = np.flatnonzero(scenes.labels != spec.target)
    chosen = np.sort(rng.choice(pool, size=n_poison, replace=False))
    images, labels, boxes = scenes.images.copy(), scenes.labels.copy(), scenes.boxes.copy()
    images[chosen] = spec.stamp(images[chosen])
    labels[chosen] = spec.target
    boxes[chosen, 0], boxes[chosen, 1] = spec.box_center
    return Scenes(images, labels, boxes, scenes.num_classes), chosen


def detector_asr(det: Detector, scenes: Scenes, spec: DetectorPoison) -> float:
    """Fraction of triggered non-target scenes classified as the target."""
    eligible = scenes.labels != spec.target
    if not eligible.any():
        raise ValueError("no eligible (non-target) scenes for attack success rate")
    return float(np.mean(det.predict(spec.stamp(scenes.images[eligible])) == spec.target))
