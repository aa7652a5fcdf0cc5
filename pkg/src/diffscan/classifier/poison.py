"""Trigger stamping and training-set poisoning (patch, blended and label-flip attacks)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset

ATTACK_KINDS = ("patch", "blended", "label-flip")
MAPPING_KINDS = ("all-to-one", "one-to-one", "all-to-all")

CORNERS = ("TL", "TR", "BL", "BR")


@dataclass(frozen=True)
class LabelMapping:
    """Which source labels the backdoor redirects, and where to."""

    kind: str = "all-to-one"
    target: Optional[int] = None
    source: Optional[int] = None
    shift: Optional[int] = None

    def __post_init__(self):
        if self.kind not in MAPPING_KINDS:
            raise ValueError(f"unknown label mapping {self.kind!r}")
        if self.kind in ("all-to-one", "one-to-one") and self.target is None:
            raise ValueError(f"{self.kind} mapping needs a target class")
        if self.kind == "one-to-one" and self.source is None:
            raise ValueError("one-to-one mapping needs a source class")
        if self.kind == "one-to-one" and self.source == self.target:
            raise ValueError("one-to-one mapping needs source != target")
        if self.kind == "all-to-all" and not self.shift:
            raise ValueError("all-to-all mapping needs a nonzero shift")

    def check(self, num_classes: int) -> None:
        for name in ("target", "source"):
            v = getattr(self, name)
            if v is not None and not 0 <= v < num_classes:
                raise ValueError(f"mapping {name} {v} references a class >= K={num_classes}")
        if self.kind == "all-to-all" and self.shift % num_classes == 0:
            raise ValueError(f"all-to-all shift {self.shift} is a multiple of K={num_classes}")

    def map(self, labels: np.ndarray, num_classes: int) -> np.ndarray:
        """Poisoned label per sample; -1 where the sample's class is not attacked."""
        labels = np.asarray(labels)
        if self.kind == "all-to-all":
            return (labels + self.shift) % num_classes
        out = np.full(labels.shape, -1, dtype=np.int64)
        attacked = labels != self.target if self.kind == "all-to-one" else labels == self.source
        out[attacked] = self.target
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "target": self.target, "source": self.source, "shift": self.shift}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelMapping":
        return cls(kind=d["kind"], target=d.get("target"), source=d.get("source"), shift=d.get("shift"))


@dataclass(frozen=True)
class PoisonSpec:
    """A backdoor recipe.

    ``patch`` overwrites pixels where ``mask`` is 1. ``blended`` and
    ``label-flip`` mix ``(1 - alpha) x + alpha pattern``; label-flip uses a
    faint blend and additionally stamps target-class samples while keeping
    their (already correct) label, so half of its budget is label-consistent.
    """

    kind: str
    pattern: np.ndarray
    mapping: LabelMapping
    rate: float
    mask: Optional[np.ndarray] = None
    alpha: float = 1.0
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        object.__setattr__(self, "pattern", np.asarray(self.pattern, dtype=np.float64))
        if not 0.0 < self.rate <= 0.5:
            raise ValueError(f"poison rate must lie in (0, 0.5], got {self.rate}")
        if self.kind == "patch":
            if self.mask is None:
                raise ValueError("patch attack needs a mask")
            mask = np.asarray(self.mask, dtype=np.float64)
            if not np.all((mask == 0) | (mask == 1)):
                raise ValueError("patch mask must be binary")
            if mask.shape != self.pattern.shape:
                raise ValueError(f"mask shape {mask.shape} != pattern shape {self.pattern.shape}")
            object.__setattr__(self, "mask", mask)
        elif not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"blend ratio must lie in (0, 1], got {self.alpha}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "pattern": self.pattern.tolist(),
            "mask": None if self.mask is None else self.mask.tolist(),
            "alpha": self.alpha,
            "rate": self.rate,
            "mapping": self.mapping.to_dict(),
            "notes": dict(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PoisonSpec":
        return cls(
            kind=d["kind"],
            pattern=np.asarray(d["pattern"]),
            mask=None if d.get("mask") is None else np.asarray(d["mask"]),
            alpha=float(d["alpha"]),
            rate=float(d["rate"]),
            mapping=LabelMapping.from_dict(d["mapping"]),
            notes=dict(d.get("notes", {})),
        )


def apply_trigger(x: np.ndarray, spec: PoisonSpec) -> np.ndarray:
    """Stamp the trigger onto one image or a batch; result clamped to [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-spec.pattern.ndim:] != spec.pattern.shape:
        raise ValueError(f"trigger pattern {spec.pattern.shape} incompatible with image {x.shape}")
    if spec.kind == "patch":
        out = x * (1.0 - spec.mask) + spec.pattern * spec.mask
    else:
        out = (1.0 - spec.alpha) * x + spec.alpha * spec.pattern
    return np.clip(out, -1.0, 1.0)


def corner_patch(shape, size: int, corner: str, rng: np.random.Generator, margin: int = 0):
    """Random +-1 square patch and its binary mask at ``corner`` of a [C,H,W] image."""
    c, h, w = shape
    if corner not in CORNERS:
        raise ValueError(f"unknown corner {corner!r}")
    r0 = margin if corner[0] == "T" else h - size - margin
    c0 = margin if corner[1] == "L" else w - size - margin
    mask = np.zeros(shape)
    mask[:, r0 : r0 + size, c0 : c0 + size] = 1.0
    signs = rng.choice([-1.0, 1.0], size=(c, size, size))
    # keep the patch visibly non-constant
    signs.reshape(c, -1)[:, 0] = 1.0
    signs.reshape(c, -1)[:, -1] = -1.0
    pattern = np.zeros(shape)
    pattern[:, r0 : r0 + size, c0 : c0 + size] = signs
    return pattern, mask


def blocky_pattern(shape, block: int, rng: np.random.Generator) -> np.ndarray:
    """Full-image +-1 pattern constant on ``block x block`` tiles."""
    c, h, w = shape
    coarse = rng.choice([-1.0, 1.0], size=(c, -(-h // block), -(-w // block)))
    return np.repeat(np.repeat(coarse, block, axis=1), block, axis=2)[:, :h, :w]


def poison_dataset(d: Dataset, spec: PoisonSpec, seed: int) -> tuple[Dataset, np.ndarray]:
    """Stamp and relabel exactly ``round(rate * len(d))`` samples.

    Returns the poisoned dataset (sample order preserved) and the sorted
    indices that were modified; every other sample is bit-identical.
    """
    k = d.num_classes
    spec.mapping.check(k)
    n_poison = int(round(spec.rate * len(d)))
    if n_poison < 1:
        raise ValueError(f"rate {spec.rate} poisons no sample of a {len(d)}-sample dataset")
    rng = np.random.default_rng([seed, 15485863])
    mapped = spec.mapping.map(d.labels, k)
    flip_pool = np.flatnonzero(mapped >= 0)
    if spec.kind == "label-flip" and spec.mapping.kind != "all-to-all":
        keep_pool = np.flatnonzero(d.labels == spec.mapping.target)
        n_keep = n_poison // 2
        chosen = np.concatenate([
            rng.choice(flip_pool, size=n_poison - n_keep, replace=False),
            rng.choice(keep_pool, size=n_keep, replace=False),
        ])
    else:
        if n_poison > flip_pool.size:
            raise ValueError(f"need {n_poison} eligible samples, only {flip_pool.size} available")
        chosen = rng.choice(flip_pool, size=n_poison, replace=False)
    chosen = np.sort(chosen)
    images = d.images.copy()
    labels = d.labels.copy()
    images[chosen] = apply_trigger(d.images[chosen], spec)
    new_labels = mapped[chosen]
    keep = new_labels < 0
    new_labels[keep] = d.labels[chosen][keep]
    labels[chosen] = new_labels
    return Dataset(images, labels, k), chosen
