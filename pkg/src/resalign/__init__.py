"""Coarse-to-fine residual alignment of 3-D volumes with motion-separability analysis."""

__version__ = "0.1.0"

from ._validation import InvalidDataError, NumericError, UndefinedMetricError
from .accumulator import AccumulatorParams, accumulate, confidence_weights, interpolate_weighted, multi_head_masks
from .analysis import (
    ArchitectureConfig,
    LevelConfig,
    SeparabilityProfile,
    capture_range,
    covers_whole_image,
    level_table,
    ma_config,
    profile_area,
    receptive_field_size,
    separability_profile,
)
from .estimator import ResidualAligner
from .field import (
    DisplacementField,
    Volume,
    compose,
    gradient,
    identity_field,
    jacobian_det,
    resample_field,
    resample_volume,
    warp,
)
from .metrics import asd, dice, hausdorff, motion_pair_pdf, neg_jacobian_count, warp_labels
from .pipeline import (
    RegistrationParams,
    RegistrationResult,
    SyntheticDeformation,
    measured_separability,
    objective,
    register,
    synth_ddf,
    theory_params,
)
from .regressor import MultiHeadProposal, regress_residual

__all__ = [
    "__version__",
    "InvalidDataError",
    "NumericError",
    "UndefinedMetricError",
    "AccumulatorParams",
    "accumulate",
    "confidence_weights",
    "interpolate_weighted",
    "multi_head_masks",
    "ArchitectureConfig",
    "LevelConfig",
    "SeparabilityProfile",
    "capture_range",
    "covers_whole_image",
    "level_table",
    "ma_config",
    "profile_area",
    "receptive_field_size",
    "separability_profile",
    "ResidualAligner",
    "DisplacementField",
    "Volume",
    "compose",
    "gradient",
    "identity_field",
    "jacobian_det",
    "resample_field",
    "resample_volume",
    "warp",
    "asd",
    "dice",
    "hausdorff",
    "motion_pair_pdf",
    "neg_jacobian_count",
    "warp_labels",
    "RegistrationParams",
    "RegistrationResult",
    "SyntheticDeformation",
    "measured_separability",
    "objective",
    "register",
    "synth_ddf",
    "theory_params",
    "MultiHeadProposal",
    "regress_residual",
]
