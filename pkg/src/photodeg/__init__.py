"""Accelerated photodegradation testing.

Fit nonlinear mixed-effects degradation models to constant-condition
laboratory data, predict damage under recorded outdoor weather with a
cumulative damage model, and attach calibrated prediction intervals.
"""
from ._accel import HAVE_NUMBA
from .categorical import TABLE3, CategoricalParams
from .data import AccelDataset, Specimen, clean
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DegenerateInputError,
    DegeneratePredictionError,
    DomainError,
    ExtrapolationError,
    ImputationError,
    MissingDataError,
    PhotodegError,
    RankDeficiencyError,
    ValidationError,
)
from .fitting import CategoricalFit, CombinedFit, aic, fit_categorical, fit_combined
from .likelihood import marginal_loglik
from .path import (
    TABLE4,
    CombinedParams,
    ExposureConditions,
    arrhenius_log,
    degradation_path,
    failure_time,
    nd_log_effect,
    overall_nd_effect,
    phi,
    rh_log_effect,
    sigma_of_lambda,
    z_combined,
)
from .prediction import (
    PredictionBand,
    calibrated_interval,
    estimate_random_effect,
    predict_path,
    prediction_mse,
)
from .spectral import (
    DosageSeries,
    FilterStack,
    SpectralCurve,
    WavelengthSplit,
    area_proportions,
    effective_dosage_constant,
    filtered_irradiance,
    wavelength_dosage,
)
from .weather import CovariateHistory, bin_history, impute_covariates, incremental_effective_dosage

__version__ = "0.1.0"

__all__ = [
    "HAVE_NUMBA",
    "TABLE3",
    "TABLE4",
    "AccelDataset",
    "CategoricalFit",
    "CategoricalParams",
    "CombinedFit",
    "CombinedParams",
    "ConfigurationError",
    "ConvergenceError",
    "CovariateHistory",
    "DegenerateInputError",
    "DegeneratePredictionError",
    "DomainError",
    "DosageSeries",
    "ExposureConditions",
    "ExtrapolationError",
    "FilterStack",
    "ImputationError",
    "MissingDataError",
    "PhotodegError",
    "PredictionBand",
    "RankDeficiencyError",
    "SpectralCurve",
    "Specimen",
    "ValidationError",
    "WavelengthSplit",
    "aic",
    "area_proportions",
    "arrhenius_log",
    "bin_history",
    "calibrated_interval",
    "clean",
    "degradation_path",
    "effective_dosage_constant",
    "estimate_random_effect",
    "failure_time",
    "filtered_irradiance",
    "fit_categorical",
    "fit_combined",
    "impute_covariates",
    "incremental_effective_dosage",
    "marginal_loglik",
    "nd_log_effect",
    "overall_nd_effect",
    "phi",
    "predict_path",
    "prediction_mse",
    "rh_log_effect",
    "sigma_of_lambda",
    "wavelength_dosage",
    "z_combined",
]
