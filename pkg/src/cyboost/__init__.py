"""Explainable generalized additive models trained by cyclic boosting."""

from .binning import FeatureSpec, apply_binning, compose_bins, fit_binning
from .conjugate import PriorConfig
from .engine import (
    ADDITIVE,
    CLASSIFICATION,
    MULTIPLICATIVE,
    Model,
    TrainingConfig,
    convergence_metric,
    learning_rate,
    predict,
    train,
)
from .explanation import diagnose_feature, explain, explain_rows
from .smoothing import SmootherConfig
from .uplift import estimate_effects, train_uplift

__all__ = [
    "ADDITIVE",
    "CLASSIFICATION",
    "MULTIPLICATIVE",
    "FeatureSpec",
    "Model",
    "PriorConfig",
    "SmootherConfig",
    "TrainingConfig",
    "apply_binning",
    "compose_bins",
    "convergence_metric",
    "diagnose_feature",
    "estimate_effects",
    "explain",
    "explain_rows",
    "fit_binning",
    "learning_rate",
    "predict",
    "train",
    "train_uplift",
]
