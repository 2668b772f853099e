"""Parametric competing-risks mixture models for hospital pathways.

A patient moves Hospital -> {Discharge, Death, ICU} and ICU -> {Discharge,
Death}; each step is a multinomial choice of destination followed by an
accelerated-failure-time duration.  The package fits both sub-models by
censored maximum likelihood, derives fatality risks and lengths of stay,
checks fit against Aalen-Johansen curves and simulates cohorts.
"""

from .distributions import DistributionSpec, Family
from .design import CovariateSchema, Factor, encode
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    HospmixError,
    IdentifiabilityError,
    ImpossibleDataError,
    NumericalError,
    SingularHessianError,
    ValidationError,
)
from .model import (
    Delta,
    ParameterSet,
    StateId,
    SubModelSpec,
    TransitionObservation,
    conditional_time_spec,
    dataset_loglik,
    hospital_submodel,
    icu_submodel,
    transition_probs,
)
from .estimation import FitOptions, FittedSubModel, compare_models, fit, load_report, save_report
from .prediction import (
    PredictionResult,
    expected_time_ratios,
    hfr,
    next_event_probs,
    odds_ratios,
    parametric_cif,
    time_quantiles,
)
from .nonparametric import CifCurve, aalen_johansen, gof_distance
from .simulation import CensoringConfig, simulate_cohort, simulate_pathway
from .dataio import RawRecord, derive_observations, parse_cohort

__version__ = "0.1.0"

__all__ = [
    "DistributionSpec",
    "Family",
    "CovariateSchema",
    "Factor",
    "encode",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "HospmixError",
    "IdentifiabilityError",
    "ImpossibleDataError",
    "NumericalError",
    "SingularHessianError",
    "ValidationError",
    "Delta",
    "ParameterSet",
    "StateId",
    "SubModelSpec",
    "TransitionObservation",
    "conditional_time_spec",
    "dataset_loglik",
    "hospital_submodel",
    "icu_submodel",
    "transition_probs",
    "FitOptions",
    "FittedSubModel",
    "compare_models",
    "fit",
    "load_report",
    "save_report",
    "PredictionResult",
    "expected_time_ratios",
    "hfr",
    "next_event_probs",
    "odds_ratios",
    "parametric_cif",
    "time_quantiles",
    "CifCurve",
    "aalen_johansen",
    "gof_distance",
    "CensoringConfig",
    "simulate_cohort",
    "simulate_pathway",
    "RawRecord",
    "derive_observations",
    "parse_cohort",
]
