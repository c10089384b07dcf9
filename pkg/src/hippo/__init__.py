"""Sparse regression with covariate-dependent variance.

Fits high-dimensional linear models whose log variance is itself a sparse
linear function of the covariates, via a three-stage penalized
pseudolikelihood scheme (SCAD penalty, "hippo") with an l1-penalized
baseline ("hhr"), tuned by AIC/BIC.
"""

from .model import (
    Dataset,
    FitResult,
    ModelParams,
    SweepSnapshot,
    neg_log_likelihood,
    neg_log_likelihood_terms,
    predict_mean,
    residuals,
    variance_scale,
)
from .penalty import (
    L1,
    SCAD,
    PenaltySpec,
    lla_weights,
    penalty_derivative,
    penalty_value,
    soft_threshold,
)
from .pipeline import (
    AIC,
    BIC,
    GridSpec,
    PipelineConfig,
    fit_hhr,
    fit_hippo,
    fit_stage1,
    fit_stage2,
    fit_stage3,
    fit_variance_given_beta,
    information_criterion,
    mean_lambda_grid,
    variance_lambda_grid,
)
from .solvers import (
    DegenerateResidualsError,
    LlaResult,
    SolveInfo,
    SolverConfig,
    VarianceProblem,
    WeightedL1Problem,
    kkt_residual,
    lla_solve,
    solve_variance_l1,
    solve_weighted_l1_ls,
)

__version__ = "0.1.0"

__all__ = [
    "AIC",
    "BIC",
    "Dataset",
    "DegenerateResidualsError",
    "FitResult",
    "GridSpec",
    "L1",
    "LlaResult",
    "ModelParams",
    "PenaltySpec",
    "PipelineConfig",
    "SCAD",
    "SolveInfo",
    "SolverConfig",
    "SweepSnapshot",
    "VarianceProblem",
    "WeightedL1Problem",
    "fit_hhr",
    "fit_hippo",
    "fit_stage1",
    "fit_stage2",
    "fit_stage3",
    "fit_variance_given_beta",
    "information_criterion",
    "kkt_residual",
    "lla_solve",
    "lla_weights",
    "mean_lambda_grid",
    "neg_log_likelihood",
    "neg_log_likelihood_terms",
    "penalty_derivative",
    "penalty_value",
    "predict_mean",
    "residuals",
    "soft_threshold",
    "solve_variance_l1",
    "solve_weighted_l1_ls",
    "variance_lambda_grid",
    "variance_scale",
]
