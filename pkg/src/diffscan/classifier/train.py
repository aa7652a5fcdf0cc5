"""Training, fine-tuning and evaluation metrics for classifiers under test."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from ..numerics import Adam, NonFiniteError, Tensor, cross_entropy
from .data import Dataset
from .model import ArchSpec, Classifier
from .poison import LabelMapping


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 6
    lr: float = 2e-3
    batch_size: int = 64
    seed: int = 0
    weight_decay: float = 0.0


def _fit(model: Classifier, d: Dataset, hyper: TrainConfig, rng: np.random.Generator) -> Classifier:
    params = [p.copy() for p in model.params]
    if hyper.epochs <= 0 or len(d) == 0:
        return model
    opt = Adam(params, lr=hyper.lr, weight_decay=hyper.weight_decay)
    n = len(d)
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        for step, i in enumerate(range(0, n, hyper.batch_size)):
            idx = order[i : i + hyper.batch_size]
            tparams = [Tensor(p, requires_grad=True) for p in params]
            try:
                loss = cross_entropy(model.forward(Tensor(d.images[idx]), tparams), d.labels[idx])
                loss.backward()
            except NonFiniteError as exc:
                raise TrainingDivergedError(f"loss diverged at epoch {epoch}, step {step}: {exc}") from exc
            opt.step([t.grad for t in tparams])
            if not all(np.isfinite(p).all() for p in params):
                raise TrainingDivergedError(f"parameters became non-finite at epoch {epoch}, step {step}")
    return model.with_params(params)


def train(d: Dataset, arch: ArchSpec, hyper: TrainConfig) -> tuple[Classifier, float]:
    """Train from a seeded He initialization; returns the model and its train accuracy."""
    rng = np.random.default_rng([hyper.seed, 2])
    init = Classifier(arch, arch.network().init_params(rng))
    model = _fit(init, d, hyper, rng)
    return model, evaluate(model, d)


def fine_tune(model: Classifier, d: Dataset, hyper: TrainConfig) -> Classifier:
    """Continue cross-entropy training of ``model`` on ``d`` (``model`` is not modified)."""
    return _fit(model, d, hyper, np.random.default_rng([hyper.seed, 3]))


def evaluate(f: Classifier, d: Dataset) -> float:
    """Clean accuracy."""
    if len(d) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(f.predict(d.images) == d.labels))


TriggerFn = Callable[[np.ndarray], np.ndarray]


def attack_success_rate(f: Classifier, d: Dataset, trigger: TriggerFn, y_tar: Union[int, LabelMapping]) -> float:
    """Fraction of attacked, triggered samples classified as their backdoor target.

    With an integer target every non-target sample is attacked; a
    :class:`LabelMapping` restricts and routes samples per its kind.
    """
    mapping = y_tar if isinstance(y_tar, LabelMapping) else LabelMapping("all-to-one", target=int(y_tar))
    targets = mapping.map(d.labels, d.num_classes)
    eligible = (targets >= 0) & (targets != d.labels)
    if not eligible.any():
        raise ValueError("no eligible (non-target) samples for attack success rate")
    preds = f.predict(trigger(d.images[eligible]))
    return float(np.mean(preds == targets[eligible]))


def penultimate_class_means(f: Classifier, probe: Dataset) -> np.ndarray:
    """Mean penultimate feature vector per class, shape ``[K, F]``."""
    counts = probe.class_counts()
    for y in range(f.num_classes):
        if y >= counts.size or counts[y] == 0:
            raise ValueError(f"probe set has no sample of class {y}")
    feats = f.features(probe.images)
    return np.stack([feats[probe.labels == y].mean(axis=0) for y in range(f.num_classes)])
