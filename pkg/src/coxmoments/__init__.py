"""Cox proportional-hazards estimators and Monte Carlo checks of their moments."""

__version__ = "0.1.0"

from .breslow import StepFunction, breslow_estimator, phi_n_curve, sup_distance
from .dgp import SeedSpec, simulate
from .mple import FitResult, SolverConfig, en_indicator, fit
from .partial_likelihood import (
    d1_n,
    d2_n,
    information,
    log_partial_likelihood,
    phi_n,
    score,
)
from .population import ModelSpec, phi_true, prob_T_eq_T0, reference_spec, sigma_matrix
from .survival_data import Dataset, Observation, event_times, load_csv, write_csv

__all__ = [
    "Dataset",
    "FitResult",
    "ModelSpec",
    "Observation",
    "SeedSpec",
    "SolverConfig",
    "StepFunction",
    "breslow_estimator",
    "d1_n",
    "d2_n",
    "en_indicator",
    "event_times",
    "fit",
    "information",
    "load_csv",
    "log_partial_likelihood",
    "phi_n",
    "phi_n_curve",
    "phi_true",
    "prob_T_eq_T0",
    "reference_spec",
    "score",
    "sigma_matrix",
    "simulate",
    "sup_distance",
    "write_csv",
]
