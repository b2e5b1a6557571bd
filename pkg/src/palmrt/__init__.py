"""Permutation-augmented regression tests for linear models.

The package tests whether a feature x carries signal for a response y
after adjusting for covariates Z, without distributional assumptions on
the noise.  The core test pairs the observed design with permuted copies
of it inside one pooled regression, which buys a finite-sample bound of
twice the nominal level on the worst-case type I error.  Confidence
intervals come from exact inversion of the test, classical permutation
baselines are included for comparison, and a simulation harness with
power-calibrated signal strengths reproduces the operating
characteristics end to end.
"""

from .linalg import Basis, residual_ss, residual_vector
from .permutations import (
    PermStream,
    Permutation,
    apply_rows,
    compose,
    enumerate_all,
    identity,
    inverse,
)
from .core import (
    Dataset,
    PairedStat,
    TestReport,
    bivariate_statistic,
    omega_values,
    palmrt_pair,
    palmrt_test,
    transferability_check,
)
from .baselines import braak_test, f_test, fl_test, kennedy_test, perm_test
from .ci import (
    ConfInterval,
    CriticalLedger,
    PairCoeffs,
    grid_oracle_ci,
    invert_ci,
    normal_ci,
    pair_coeffs,
)
from .simulate import (
    DesignSpec,
    ExperimentResult,
    NoiseSpec,
    calibrate_beta,
    gen_design,
    gen_noise,
    run_ci_coverage,
    run_power,
    run_type1,
)
from .errors import CalibrationError, InternalConsistencyError, InvalidInputError, PalmrtError

__version__ = "0.1.0"

__all__ = [
    "Basis",
    "CalibrationError",
    "ConfInterval",
    "CriticalLedger",
    "Dataset",
    "DesignSpec",
    "ExperimentResult",
    "InternalConsistencyError",
    "InvalidInputError",
    "NoiseSpec",
    "PairCoeffs",
    "PairedStat",
    "PalmrtError",
    "PermStream",
    "Permutation",
    "TestReport",
    "apply_rows",
    "bivariate_statistic",
    "braak_test",
    "calibrate_beta",
    "compose",
    "enumerate_all",
    "f_test",
    "fl_test",
    "gen_design",
    "gen_noise",
    "grid_oracle_ci",
    "identity",
    "inverse",
    "invert_ci",
    "kennedy_test",
    "normal_ci",
    "omega_values",
    "palmrt_pair",
    "palmrt_test",
    "pair_coeffs",
    "perm_test",
    "residual_ss",
    "residual_vector",
    "run_ci_coverage",
    "run_power",
    "run_type1",
    "transferability_check",
]
