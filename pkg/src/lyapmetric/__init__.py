"""Lyapunov exponents of torus maps by convex optimization over metric fields."""

from .dynamics import (
    CAT_MAP,
    LinearTorusMap,
    MeasureWeights,
    PerturbedAutomorphism,
    StandardMap,
    ToralAutomorphism,
    invariant_weights,
)
from .metric_field import MetricField, TangentField, flat_metric
from .objective import ObjectiveReport, evaluate_objective
from .optimizer import OptimizerConfig, descend, gradient_field
from .oracle import LyapunovEstimate, lyapunov_vector
from .tolerances import DEFAULT_TOLERANCES, ToleranceProfile

__version__ = "0.1.0"

__all__ = [
    "CAT_MAP",
    "DEFAULT_TOLERANCES",
    "LinearTorusMap",
    "LyapunovEstimate",
    "MeasureWeights",
    "MetricField",
    "ObjectiveReport",
    "OptimizerConfig",
    "PerturbedAutomorphism",
    "StandardMap",
    "TangentField",
    "ToleranceProfile",
    "ToralAutomorphism",
    "descend",
    "evaluate_objective",
    "flat_metric",
    "gradient_field",
    "invariant_weights",
    "lyapunov_vector",
]
