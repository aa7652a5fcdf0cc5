from .detector import (
    Detector,
    DetectorArch,
    DetectorPoison,
    DetectorTrainConfig,
    SceneLaw,
    Scenes,
    default_detector_arch,
    detection_accuracy,
    detector_asr,
    poison_scenes,
    train_detector,
)
from .corner import (
    TAU,
    CornerSpec,
    DetectionRun,
    DetectionScanReport,
    corner_log_prob,
    corner_shift_grad,
    detection_terms,
    detector_trojan_score,
    invert_detection_many,
    invert_detection_trigger,
    log_membership,
    membership,
    random_corner,
    scan_detector,
)

__all__ = [
    "TAU",
    "CornerSpec",
    "DetectionRun",
    "DetectionScanReport",
    "Detector",
    "DetectorArch",
    "DetectorPoison",
    "DetectorTrainConfig",
    "SceneLaw",
    "Scenes",
    "corner_log_prob",
    "corner_shift_grad",
    "default_detector_arch",
    "detection_accuracy",
    "detection_terms",
    "detector_asr",
    "detector_trojan_score",
    "invert_detection_many",
    "invert_detection_trigger",
    "log_membership",
    "membership",
    "poison_scenes",
    "random_corner",
    "scan_detector",
    "train_detector",
]
