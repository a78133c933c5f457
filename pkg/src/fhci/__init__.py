"""Fay-Herriot small area estimation with adjusted-likelihood empirical Bayes intervals."""

from ._core import BACKEND
from .errors import (
    AdmissibilityError,
    ConvergenceError,
    DataFormatError,
    ExistenceWarning,
    FayHerriotError,
    RankDeficiencyError,
)
from .estimators import (
    SearchConfig,
    VarianceEstimate,
    balanced_nas_closed_form,
    estimate_variance,
    existence_holds,
    nas_estimate,
    reml,
)
from .intervals import IntervalCalculator, IntervalResult, Method, NominalLevel
from .likelihood import AdjustmentFactor, FactorKind
from .model import ModelFit, SmallAreaDataset, fit_model
from .mse import MseComponents, mse_components

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AdjustmentFactor",
    "AdmissibilityError",
    "ConvergenceError",
    "DataFormatError",
    "ExistenceWarning",
    "FactorKind",
    "FayHerriotError",
    "IntervalCalculator",
    "IntervalResult",
    "Method",
    "ModelFit",
    "MseComponents",
    "NominalLevel",
    "RankDeficiencyError",
    "SearchConfig",
    "SmallAreaDataset",
    "VarianceEstimate",
    "balanced_nas_closed_form",
    "estimate_variance",
    "existence_holds",
    "fit_model",
    "mse_components",
    "nas_estimate",
    "reml",
]
