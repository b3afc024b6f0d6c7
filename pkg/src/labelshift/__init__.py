"""Label shift quantification via maximum likelihood and rho-estimation."""

from labelshift.core import (
    DegenerateSampleError,
    DiscreteDistribution,
    EstimationResult,
    EvalMatrix,
    InvalidInputError,
    LabelShiftError,
    NumericalError,
    SimplexVector,
    UnsupportedSizeError,
    simplex_project,
    validate_eval_matrix,
)
from labelshift.distances import (
    check_mixture_sandwich,
    delta_star,
    hellinger,
    hellinger_weights,
    total_variation,
)
from labelshift.likelihood import (
    EmConfig,
    estimate_bbse,
    estimate_grid_oracle,
    estimate_mle,
    estimate_mle_predictor,
)
from labelshift.rho import CERTIFICATE_THRESHOLD, certify, psi, t_statistic, upsilon

__version__ = "0.1.0"

__all__ = [
    "CERTIFICATE_THRESHOLD",
    "DegenerateSampleError",
    "DiscreteDistribution",
    "EmConfig",
    "EstimationResult",
    "EvalMatrix",
    "InvalidInputError",
    "LabelShiftError",
    "NumericalError",
    "SimplexVector",
    "UnsupportedSizeError",
    "certify",
    "check_mixture_sandwich",
    "delta_star",
    "estimate_bbse",
    "estimate_grid_oracle",
    "estimate_mle",
    "estimate_mle_predictor",
    "hellinger",
    "hellinger_weights",
    "psi",
    "simplex_project",
    "t_statistic",
    "total_variation",
    "upsilon",
    "validate_eval_matrix",
]
