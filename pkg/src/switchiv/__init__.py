"""Crossover-adjusted survival effects: a doubly robust instrumental-variable
estimator for structural nested cumulative survival time models, comparator
methods (treatment policy, per protocol, censoring at switch, as treated, IPCW)
and a trial simulator with a Monte-Carlo harness."""

from .aalen import AalenFit, aalen_solve
from .cox import CoxFit, fit_cox
from .dataset import Dataset, from_arrays, parse_subjects, validate, write_subjects
from .ivest import SncstmEstimate, counterfactual_control_curve, estimate_initial, estimate_iv
from .methods import METHODS, MethodResult, run_method
from .simtrial import SimConfig, generate, monte_carlo
from .survival import kaplan_meier

__all__ = [
    "AalenFit", "aalen_solve", "CoxFit", "fit_cox", "Dataset", "from_arrays",
    "parse_subjects", "validate", "write_subjects", "SncstmEstimate",
    "counterfactual_control_curve", "estimate_initial", "estimate_iv", "METHODS",
    "MethodResult", "run_method", "SimConfig", "generate", "monte_carlo", "kaplan_meier",
]
