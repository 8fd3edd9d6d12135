"""Interaction tests for covariate-adaptive randomized trials."""

from .errors import CarstatError
from .randomization import DesignSpec, assign_all, assign_next, RandomizerState
from .testing import TestResult, run_t_test, run_wald_test, run_test, smw_inverse_apply
from .trial_data import TrialDataset, build_dataset, validate_for_test

__version__ = "0.1.0"

__all__ = [
    "CarstatError",
    "DesignSpec",
    "RandomizerState",
    "TestResult",
    "TrialDataset",
    "assign_all",
    "assign_next",
    "build_dataset",
    "run_t_test",
    "run_test",
    "run_wald_test",
    "smw_inverse_apply",
    "validate_for_test",
]
