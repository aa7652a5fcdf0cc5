from .bench import (
    SETUPS,
    BenchmarkResult,
    ScanContext,
    Summary,
    ablation_table,
    auc,
    calibrate_threshold,
    decision_agreement,
    load_benchmark,
    load_reports,
    mitigate_entry,
    recheck_entry,
    run_ablation,
    run_benchmark,
    scan_classifier,
    scan_detector_model,
    summarize,
    write_benchmark,
)
from .config import ConfigError, RunConfig, load_config, parse_config
from .formats import (
    BadMagicError,
    HeaderMismatchError,
    ModelFormatError,
    TruncatedError,
    decode_model,
    encode_model,
    export_trigger,
    load_model,
    load_model_with_metadata,
    parse,
    pixel_levels,
    read_doc,
    read_pnm,
    render,
    save_model,
    write_doc,
)
from .zoo import ZooSpec, build_zoo, load_manifest, load_poison
