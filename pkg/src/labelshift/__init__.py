"""Label-shift adaptation: importance-weight estimation (confusion-matrix
inversion, class-prior EM, moment matching, and the damped-score estimating
equation), posterior calibration, plug-in uncertainty, Bayes adjustment of
posteriors, and a seeded Monte-Carlo benchmark harness."""

__version__ = "0.1.0"

from .adapt import (
    AdaptationReport,
    adapt_and_predict,
    adjust_matrix,
    bayes_adjust,
    delta_accuracy,
    weight_mse,
)
from .calibrate import CalibrationMap, apply_calibration, fit_calibration, softmax
from .core import (
    LabelDist,
    LogitMatrix,
    ProbMatrix,
    SourceSet,
    TargetSet,
    Weights,
    class_proportions,
    validate_prob_matrix,
)
from .errors import LabelShiftError
from .estimators import (
    ConfusionMatrix,
    ElsaConfig,
    ElsaState,
    complete_weights,
    confusion_matrix,
    elsa_solve,
    h_elsa,
    mlls_em,
    moment_match_solve,
    solve_bbse,
    solve_rlls,
    target_mean,
)
from .inference import (
    SandwichEstimate,
    confidence_intervals,
    estimating_function_g,
    normal_quantile,
    sandwich_covariance,
)
from .simulate import (
    MixtureSpec,
    ShiftSpec,
    exact_posterior,
    generate_mixture,
    posterior_matrix,
    resample_target,
    sample_dirichlet_dist,
    tweak_one_dist,
)

__all__ = [
    "AdaptationReport", "CalibrationMap", "ConfusionMatrix", "ElsaConfig", "ElsaState",
    "LabelDist", "LabelShiftError", "LogitMatrix", "MixtureSpec", "ProbMatrix",
    "SandwichEstimate", "ShiftSpec", "SourceSet", "TargetSet", "Weights",
    "adapt_and_predict", "adjust_matrix", "apply_calibration", "bayes_adjust",
    "class_proportions", "complete_weights", "confidence_intervals", "confusion_matrix",
    "delta_accuracy", "elsa_solve", "estimating_function_g", "exact_posterior",
    "fit_calibration", "generate_mixture", "h_elsa", "mlls_em", "moment_match_solve",
    "normal_quantile", "posterior_matrix", "resample_target", "sample_dirichlet_dist",
    "sandwich_covariance", "softmax", "solve_bbse", "solve_rlls", "target_mean",
    "tweak_one_dist", "validate_prob_matrix", "weight_mse",
]
