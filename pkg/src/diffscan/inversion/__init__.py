from .guidance import (
    NOISE_MODES,
    RETRY_PRIME,
    Failure,
    GuidanceConfig,
    TriggerCandidate,
    attempt_rng,
    classifier_conf_fn,
    classifier_grad_fn,
    guided_reverse_step,
    guided_steps,
    injected_noise,
    invert_many,
    invert_pairs,
    invert_trigger,
)
from .mitigate import MitigationResult, mitigate, unlearning_set
from .pixel import pixel_inverter, pixel_pass
from .scan import (
    CLEAN,
    FAILED_STRENGTH,
    TROJANED,
    PairScore,
    ScanReport,
    all_pairs,
    assemble_report,
    fast_pairs,
    feature_cosines,
    predict_target,
    scan_fast,
    scan_full,
    trigger_score,
)

__all__ = [
    "CLEAN",
    "FAILED_STRENGTH",
    "Failure",
    "GuidanceConfig",
    "MitigationResult",
    "NOISE_MODES",
    "PairScore",
    "RETRY_PRIME",
    "ScanReport",
    "TROJANED",
    "TriggerCandidate",
    "all_pairs",
    "assemble_report",
    "attempt_rng",
    "classifier_conf_fn",
    "classifier_grad_fn",
    "fast_pairs",
    "feature_cosines",
    "guided_reverse_step",
    "guided_steps",
    "injected_noise",
    "invert_many",
    "invert_pairs",
    "invert_trigger",
    "mitigate",
    "pixel_inverter",
    "pixel_pass",
    "predict_target",
    "scan_fast",
    "scan_full",
    "trigger_score",
    "unlearning_set",
]
