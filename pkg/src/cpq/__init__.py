"""Conformal prediction sets for generative models queried through a sampling oracle.

The package estimates the probability mass of unseen labels with Good-Turing
estimators, decides adaptively how many samples to draw per input, and
calibrates prediction sets that may contain an "everything else" (EE) label.
"""

from .conformal import (
    EE,
    CalibrationModel,
    PredictionSet,
    build_prediction_set,
    calibrate_quantile,
    conformity_score,
    vanilla_build_set,
    vanilla_calibrate,
)
from .distributions import (
    DiscreteDistribution,
    exact_derivative,
    exact_missing_mass,
    make_dirichlet,
    make_geometric,
    make_uniform,
    sample,
)
from .errors import (
    BudgetExhausted,
    CPQError,
    DuplicateIdError,
    InfeasibleCalibration,
    InvalidInput,
    InvalidParameter,
    ModelFormatError,
    OracleIOError,
    ParseError,
    UndefinedEstimate,
    UnknownLabel,
)
from .estimators import (
    EstimatorConfig,
    LabelProbabilities,
    gt_derivative,
    gt_missing_mass,
    gt_seen_probability,
    label_probabilities,
    naive_derivative,
)
from .experiments import (
    ExperimentConfig,
    fit_model,
    make_synthetic_task,
    predict,
    run_estimator_eval,
    run_split_experiment,
)
from .oracle import ExternalOracle, QueryRecord, ReplayOracle, SyntheticOracle, load_records
from .policy import PolicyConfig, greedy_allocate, run_query_loop, tune_beta
from .tally import Tally

__version__ = "0.1.0"

__all__ = [
    "BudgetExhausted",
    "CPQError",
    "CalibrationModel",
    "DiscreteDistribution",
    "DuplicateIdError",
    "EE",
    "EstimatorConfig",
    "ExperimentConfig",
    "ExternalOracle",
    "InfeasibleCalibration",
    "InvalidInput",
    "InvalidParameter",
    "LabelProbabilities",
    "ModelFormatError",
    "OracleIOError",
    "ParseError",
    "PolicyConfig",
    "PredictionSet",
    "QueryRecord",
    "ReplayOracle",
    "SyntheticOracle",
    "Tally",
    "UndefinedEstimate",
    "UnknownLabel",
    "build_prediction_set",
    "calibrate_quantile",
    "conformity_score",
    "exact_derivative",
    "exact_missing_mass",
    "fit_model",
    "greedy_allocate",
    "gt_derivative",
    "gt_missing_mass",
    "gt_seen_probability",
    "label_probabilities",
    "load_records",
    "make_dirichlet",
    "make_geometric",
    "make_synthetic_task",
    "make_uniform",
    "naive_derivative",
    "predict",
    "run_estimator_eval",
    "run_query_loop",
    "run_split_experiment",
    "sample",
    "tune_beta",
    "vanilla_build_set",
    "vanilla_calibrate",
]
