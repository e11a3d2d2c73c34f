"""Randomization-based inference for two-arm trials with a preliminary
balance test deciding between unadjusted and covariate-adjusted estimators.
"""

from .design import (
    Assignment,
    BalanceReport,
    balance_test,
    complete_randomization,
    mahalanobis,
    rem_randomization,
)
from .errors import (
    AcceptanceExhausted,
    ConfigError,
    DegenerateAnchor,
    DimensionMismatch,
    EmptyConditionSet,
    InputError,
    InvalidSizes,
    LeverageOne,
    PTBalanceError,
    RankDeficient,
    SingularCovariates,
    StatisticalError,
)
from .estimators import (
    METHODS,
    EstimateReport,
    ObservedTrial,
    estimate,
    estimate_F,
    estimate_L,
    estimate_N,
    estimate_PT,
)
from .frt import (
    STATISTICS,
    FRTResult,
    FRTSpec,
    PermutationEngine,
    prepivot_statistic,
    randomization_reference,
    run_conditional_frt,
    run_frt,
)
from .ols import RegressionFit, fit
from .population import (
    RECIPES,
    FinitePopulation,
    TrueParameters,
    generate_population,
    true_parameters,
)
from .rng import ASSIGNMENT, PERMUTATION, POPULATION, REFDIST, stream
from .refdist import (
    MixtureReference,
    StudentizedPTReference,
    TruncatedGaussianComponent,
    mixture_quantile,
    pi_a,
    pt_mixture,
    pt_specific_ci,
    sample_truncated,
)
from .simharness import (
    SimulationConfig,
    SimulationSummary,
    chi2_quantile,
    frt_type1_study,
    rem_vs_cr_overlay,
    run_simulation,
)

__version__ = "0.1.0"
