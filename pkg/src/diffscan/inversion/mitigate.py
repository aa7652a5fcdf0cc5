"""Backdoor removal by fine-tuning on clean images stamped with recovered triggers (labels kept)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..classifier import Classifier, Dataset, TrainConfig, evaluate, fine_tune
from .guidance import TriggerCandidate


@dataclass
class MitigationResult:
    model: Classifier
    acc_before: float
    acc_after: float
    asr_before: Optional[float]
    asr_after: Optional[float]
    finetune_size: int


def unlearning_set(triggers: Sequence[TriggerCandidate], clean: Dataset) -> Dataset:
    """Clean samples plus, per trigger, its source-class samples with the pattern added and original labels."""
    images, labels = [clean.images], [clean.labels]
    for cand in triggers:
        idx = np.flatnonzero(clean.labels == cand.y_src)
        images.append(np.clip(clean.images[idx] + cand.pattern, -1.0, 1.0))
        labels.append(clean.labels[idx])
    return Dataset(np.concatenate(images), np.concatenate(labels), clean.num_classes)


def mitigate(f: Classifier, triggers: Sequence[TriggerCandidate], clean: Dataset, hyper: TrainConfig,
             eval_data: Optional[Dataset] = None,
             asr_fn: Optional[Callable[[Classifier], float]] = None) -> MitigationResult:
    """Fine-tune ``f`` on :func:`unlearning_set`; ACC (and ASR when ``asr_fn`` is given) before and after."""
    if not triggers:
        raise ValueError("no accepted triggers to mitigate with; scan the model first")
    if len(clean) == 0:
        raise ValueError("mitigation needs a nonempty clean set")
    ft = unlearning_set(triggers, clean)
    after = fine_tune(f, ft, hyper)
    ev = clean if eval_data is None else eval_data
    return MitigationResult(
        model=after,
        acc_before=evaluate(f, ev),
        acc_after=evaluate(after, ev),
        asr_before=None if asr_fn is None else asr_fn(f),
        asr_after=None if asr_fn is None else asr_fn(after),
        finetune_size=len(ft),
    )
