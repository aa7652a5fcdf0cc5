"""Synthetic desk data: per-class smooth prototype images plus isotropic Gaussian noise."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Dataset:
    """Images in [-1, 1] with integer labels in [0, num_classes)."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.images.size and (self.images.min() < -1.0 or self.images.max() > 1.0):
            raise ValueError("images must lie in [-1, 1]")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)

    def of_class(self, y: int) -> np.ndarray:
        return self.images[self.labels == y]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def _smooth_pattern(rng: np.random.Generator, h: int, w: int, waves: int = 3, max_freq: float = 2.5) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    img = np.zeros((h, w))
    for _ in range(waves):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.8, max_freq)
        phase = rng.uniform(0, 2 * np.pi)
        img += np.cos(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    return img


@dataclass(frozen=True)
class DataLaw:
    """Class-conditional Gaussian law: ``x | y ~ N(prototype_y, sigma^2 I)`` clipped to [-1, 1].

    Prototypes are zero-mean smooth cosine mixtures scaled to peak ``amplitude``;
    they are a pure function of ``seed`` so the law can be rebuilt anywhere.
    """

    num_classes: int = 4
    shape: tuple[int, int, int] = (1, 16, 16)
    sigma: float = 0.3
    amplitude: float = 0.9
    seed: int = 0
    prototypes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        c, h, w = self.shape
        rng = np.random.default_rng([self.seed, 7919])
        protos = np.empty((self.num_classes, c, h, w))
        for k in range(self.num_classes):
            for ch in range(c):
                p = _smooth_pattern(rng, h, w)
                p -= p.mean()
                protos[k, ch] = self.amplitude * p / np.abs(p).max()
        protos.setflags(write=False)
        object.__setattr__(self, "prototypes", protos)

    def sample(self, n_per_class: int, rng: np.random.Generator) -> Dataset:
        """Draw ``n_per_class`` images of every class, labels interleaved 0,1,..,K-1,0,..."""
        labels = np.tile(np.arange(self.num_classes), n_per_class)
        noise = rng.normal(0.0, self.sigma, size=(labels.size,) + self.shape)
        images = np.clip(self.prototypes[labels] + noise, -1.0, 1.0)
        return Dataset(images, labels, self.num_classes)

    def sample_class(self, y: int, n: int, rng: np.random.Generator) -> np.ndarray:
        if not 0 <= y < self.num_classes:
            raise ValueError(f"class {y} out of range [0, {self.num_classes})")
        noise = rng.normal(0.0, self.sigma, size=(n,) + self.shape)
        return np.clip(self.prototypes[y] + noise, -1.0, 1.0)

    def heldout_per_class(self, n: int, seed: int) -> dict[int, np.ndarray]:
        rng = np.random.default_rng([seed, 104729])
        return {y: self.sample_class(y, n, rng) for y in range(self.num_classes)}

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "shape": list(self.shape),
            "sigma": self.sigma,
            "amplitude": self.amplitude,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataLaw":
        return cls(
            num_classes=int(d["num_classes"]),
            shape=tuple(d["shape"]),
            sigma=float(d["sigma"]),
            amplitude=float(d["amplitude"]),
            seed=int(d["seed"]),
        )
