"""Keyed sinusoidal watermarking of classification APIs.

The library injects a secret periodic perturbation into served class
probabilities and later detects it in suspect models by spectral
analysis of their outputs, surviving knowledge distillation.  A
synthetic simulator, a command-line front end, and an HTTP gateway
round out the toolkit.
"""

from .detect import (
    DetectionParams,
    DetectionReport,
    ProbeRecord,
    average_precision,
    build_probe_series,
    detect_watermark,
    jsd_score,
    mean_average_precision,
    read_probe_records,
    write_probe_records,
    write_report,
)
from .errors import (
    BoundViolationError,
    DimensionError,
    DivergenceError,
    KeyFormatError,
    ProbabilityError,
    TooFewProbesError,
    VocabularyError,
    WatermarkError,
    WindowError,
)
from .keys import (
    WatermarkConfig,
    WatermarkKey,
    generate_key,
    hash_value,
    is_selected,
    load_key,
    load_key_with_config,
    phase_hash,
    save_key,
    selection_hash,
)
from .spectral import (
    PowerSpectrum,
    ProbeSeries,
    SnrResult,
    default_grid,
    lomb_scargle,
    snr_score,
    write_spectrum,
)
from .watermark import (
    WatermarkedOutput,
    apply_watermark,
    argmax_label,
    hard_label_stream,
    mix_probabilities,
    periodic_signal,
    sample_hard,
    serve,
    validate_probability_vector,
)

__version__ = "0.1.0"

__all__ = [
    "BoundViolationError",
    "DetectionParams",
    "DetectionReport",
    "DimensionError",
    "DivergenceError",
    "KeyFormatError",
    "PowerSpectrum",
    "ProbabilityError",
    "ProbeRecord",
    "ProbeSeries",
    "SnrResult",
    "TooFewProbesError",
    "VocabularyError",
    "WatermarkConfig",
    "WatermarkKey",
    "WatermarkedOutput",
    "WatermarkError",
    "WindowError",
    "apply_watermark",
    "argmax_label",
    "average_precision",
    "build_probe_series",
    "default_grid",
    "detect_watermark",
    "generate_key",
    "hard_label_stream",
    "hash_value",
    "is_selected",
    "jsd_score",
    "load_key",
    "load_key_with_config",
    "lomb_scargle",
    "mean_average_precision",
    "mix_probabilities",
    "periodic_signal",
    "phase_hash",
    "read_probe_records",
    "sample_hard",
    "save_key",
    "selection_hash",
    "serve",
    "snr_score",
    "validate_probability_vector",
    "write_probe_records",
    "write_report",
    "write_spectrum",
]
