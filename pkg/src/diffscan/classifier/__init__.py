from .data import DataLaw, Dataset
from .model import ArchSpec, Classifier, default_arch
from .poison import (
    ATTACK_KINDS,
    CORNERS,
    LabelMapping,
    PoisonSpec,
    apply_trigger,
    blocky_pattern,
    corner_patch,
    poison_dataset,
)
from .train import (
    TrainConfig,
    TrainingDivergedError,
    attack_success_rate,
    evaluate,
    fine_tune,
    penultimate_class_means,
    train,
)

__all__ = [
    "ATTACK_KINDS",
    "ArchSpec",
    "CORNERS",
    "Classifier",
    "DataLaw",
    "Dataset",
    "LabelMapping",
    "PoisonSpec",
    "TrainConfig",
    "TrainingDivergedError",
    "apply_trigger",
    "attack_success_rate",
    "blocky_pattern",
    "corner_patch",
    "default_arch",
    "evaluate",
    "fine_tune",
    "penultimate_class_means",
    "poison_dataset",
    "train",
]
