"""Volumetric PET preprocessing, threshold contouring, and evaluation.

The package covers the loop around intensity normalization for
prostate-lesion PET: dataset fingerprinting, a sweep over relative
thresholds that derives a clip bound (maxT) from segmentation quality,
the feature-clipping normalizer built on that bound, competing schemes
(z-score, global percentile clip + standardize, fixed clip), overlap and
surface metrics, a paired signed-rank test, NIfTI-1 I/O, and a synthetic
phantom generator for reproducible experiments.
"""

__version__ = "0.1.0"

from .errors import (
    BadMagicError,
    DatasetValidationError,
    EmptyMaskError,
    GeometryError,
    MissingFingerprintError,
    NiftiError,
    PhantomSpecError,
    TruncatedFileError,
    UnsupportedDatatypeError,
)
from .metrics import (
    DEFAULT_NSD_TAU_MM,
    MetricsResult,
    WilcoxonResult,
    dsc,
    evaluate_pair,
    hd95,
    nsd,
    surface_distances,
    wilcoxon_signed_rank,
)
from .nifti import (
    Case,
    DatasetDescriptor,
    DatasetLayout,
    load_dataset,
    parse_scheme,
    read_descriptor,
    read_mask,
    read_metrics_csv,
    read_sweep_json,
    read_volume,
    write_descriptor,
    write_report,
    write_volume,
)
from .normalize import (
    DatasetFingerprint,
    FeatureClipNormalizer,
    FixedClipNormalizer,
    GlobalClipNormalizer,
    ZScoreNormalizer,
    apply_scheme,
    clip,
    feature_clip,
    fingerprint,
    global_clip_standardize,
    make_normalizer,
    read_fingerprint,
    write_fingerprint,
    zscore,
)
from .phantom import (
    LesionSpec,
    PhantomSpec,
    designed_optimum,
    generate,
    generate_family,
    read_phantom_spec,
    write_phantom_spec,
)
from .sweep import (
    SweepConfig,
    SweepResult,
    ThresholdSegmenter,
    compute_threshold,
    fcn_maxT,
    fcn_sweep,
    threshold_segment,
)
from .volume import (
    GridGeometry,
    Mask,
    MultiChannelVolume,
    Volume,
    crop_to_mask,
    largest_component,
    masked_max,
    require_same_geometry,
    resample,
    stack_channels,
)

__all__ = [
    "__version__",
    "BadMagicError",
    "Case",
    "DatasetDescriptor",
    "DatasetFingerprint",
    "DatasetLayout",
    "DatasetValidationError",
    "DEFAULT_NSD_TAU_MM",
    "EmptyMaskError",
    "FeatureClipNormalizer",
    "FixedClipNormalizer",
    "GeometryError",
    "GlobalClipNormalizer",
    "GridGeometry",
    "LesionSpec",
    "Mask",
    "MetricsResult",
    "MissingFingerprintError",
    "MultiChannelVolume",
    "NiftiError",
    "PhantomSpec",
    "PhantomSpecError",
    "SweepConfig",
    "SweepResult",
    "ThresholdSegmenter",
    "TruncatedFileError",
    "UnsupportedDatatypeError",
    "Volume",
    "WilcoxonResult",
    "ZScoreNormalizer",
    "apply_scheme",
    "clip",
    "compute_threshold",
    "crop_to_mask",
    "designed_optimum",
    "dsc",
    "evaluate_pair",
    "fcn_maxT",
    "fcn_sweep",
    "feature_clip",
    "fingerprint",
    "generate",
    "generate_family",
    "global_clip_standardize",
    "hd95",
    "largest_component",
    "load_dataset",
    "make_normalizer",
    "masked_max",
    "nsd",
    "parse_scheme",
    "read_descriptor",
    "read_fingerprint",
    "read_mask",
    "read_metrics_csv",
    "read_phantom_spec",
    "read_sweep_json",
    "read_volume",
    "require_same_geometry",
    "resample",
    "stack_channels",
    "surface_distances",
    "threshold_segment",
    "wilcoxon_signed_rank",
    "write_descriptor",
    "write_fingerprint",
    "write_phantom_spec",
    "write_report",
    "write_volume",
    "zscore",
]
