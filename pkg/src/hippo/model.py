"""Heteroscedastic linear model primitives.

The model is ``y_i = x_i' beta + sigma_i * eps_i`` with a log-linear scale
``sigma_i = exp(x_i' theta / 2)``, so ``x_i' theta`` is the log variance of
observation i.  Everything downstream (penalties, solvers, tuning, Monte
Carlo) works on the types and functions defined here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Linear predictors x'theta are clipped to this range before exponentiation.
# exp(30) ~ 1e13 already dominates any objective; the clip keeps early
# iterations of the solvers free of overflow without moving any realistic
# optimum.
LINEAR_PREDICTOR_CLIP = 30.0


def _finite_1d(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class Dataset:
    """A regression instance: predictors, response, and intercept flags.

    Parameters
    ----------
    x : ndarray, shape (n, p)
        Predictor matrix without intercept columns.
    y : ndarray, shape (n,)
        Response vector.
    has_mean_intercept, has_var_intercept : bool
        When set, an unpenalized all-ones column is prepended to the
        design used for the mean / log-variance linear predictor, and the
        corresponding coefficient vectors have length p + 1.
    """

    x: np.ndarray
    y: np.ndarray
    has_mean_intercept: bool = False
    has_var_intercept: bool = False

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2:
            raise ValueError(f"x must be a matrix, got shape {x.shape}")
        y = _finite_1d(self.y, "y")
        if not np.all(np.isfinite(x)):
            raise ValueError("x contains non-finite entries")
        if x.shape[0] != y.shape[0]:
            raise ValueError(
                f"x has {x.shape[0]} rows but y has length {y.shape[0]}"
            )
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError("need at least one row and one column")
        x = x.copy()
        y = y.copy()
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_mean_coefs(self) -> int:
        return self.p + int(self.has_mean_intercept)

    @property
    def n_var_coefs(self) -> int:
        return self.p + int(self.has_var_intercept)

    @cached_property
    def mean_design(self) -> np.ndarray:
        """Design matrix for the mean, intercept column included if flagged."""
        return self._design(self.has_mean_intercept)

    @cached_property
    def var_design(self) -> np.ndarray:
        """Design matrix for the log variance."""
        return self._design(self.has_var_intercept)

    def _design(self, intercept: bool) -> np.ndarray:
        if not intercept:
            return self.x
        d = np.hstack([np.ones((self.n, 1)), self.x])
        d.flags.writeable = False
        return d

    def subset(self, rows) -> "Dataset":
        """New Dataset restricted to the given row indices."""
        return Dataset(
            self.x[rows], self.y[rows], self.has_mean_intercept, self.has_var_intercept
        )


@dataclass(frozen=True)
class ModelParams:
    """Mean coefficients beta and log-variance coefficients theta.

    Lengths must match the owning :class:`Dataset` (p, or p + 1 when the
    corresponding intercept flag is set; the intercept is entry 0).
    """

    beta: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        beta = _finite_1d(self.beta, "beta")
        theta = _finite_1d(self.theta, "theta")
        beta.flags.writeable = False
        theta.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta", theta)

    def beta_support(self) -> np.ndarray:
        return np.flatnonzero(self.beta)

    def theta_support(self) -> np.ndarray:
        return np.flatnonzero(self.theta)

    def df(self) -> int:
        """Selected degrees of freedom: |supp(beta)| + |supp(theta)|.

        Intercepts count like any other nonzero coefficient.
        """
        return int(self.beta_support().size + self.theta_support().size)


def _check_len(vec: np.ndarray, expected: int, name: str):
    if vec.shape[0] != expected:
        raise ValueError(f"{name} has length {vec.shape[0]}, expected {expected}")


def predict_mean(d: Dataset, params: ModelParams) -> np.ndarray:
    """Fitted means x_i' beta (intercept included when flagged)."""
    _check_len(params.beta, d.n_mean_coefs, "beta")
    return d.mean_design @ params.beta


def log_variance(d: Dataset, params: ModelParams) -> np.ndarray:
    """Clipped log-variance linear predictor x_i' theta."""
    _check_len(params.theta, d.n_var_coefs, "theta")
    z = d.var_design @ params.theta
    return np.clip(z, -LINEAR_PREDICTOR_CLIP, LINEAR_PREDICTOR_CLIP)


def variance_scale(d: Dataset, params: ModelParams) -> np.ndarray:
    """Per-observation scale sigma_i = exp(x_i' theta / 2); always positive."""
    return np.exp(0.5 * log_variance(d, params))


def residuals(d: Dataset, params: ModelParams) -> np.ndarray:
    """y - X beta."""
    return d.y - predict_mean(d, params)


def neg_log_likelihood_terms(d: Dataset, params: ModelParams) -> np.ndarray:
    """Per-row negative log-likelihood x'theta + (y - x'beta)^2 exp(-x'theta).

    Additive constants (n log 2pi and the usual 1/2 factor) are dropped, so
    values are comparable across fits of the same data but are not absolute
    likelihoods.  The linear predictor is clipped once and used in both
    terms.
    """
    z = log_variance(d, params)
    r = residuals(d, params)
    return z + r * r * np.exp(-z)


def neg_log_likelihood(d: Dataset, params: ModelParams) -> float:
    """Total negative log-likelihood, summed over rows."""
    return float(np.sum(neg_log_likelihood_terms(d, params)))


@dataclass(frozen=True)
class SweepSnapshot:
    """Parameters after one full alternation (mean fit + variance fit)."""

    iteration: int
    beta: np.ndarray
    theta: np.ndarray
    lambda_s: float
    lambda_t: float


@dataclass
class FitResult:
    """A tuned fit with its diagnostics.

    ``objective_trace`` concatenates the penalized-objective traces of the
    selected fit at each stage, in stage order; within each stage's trace
    the values are non-increasing (majorization guarantee), which
    ``max_trace_jump`` quantifies: the largest relative increase seen
    between consecutive trace entries of any single stage (0 when all
    traces are monotone).

    ``n_iterations`` maps stage labels to total inner-solver iterations of
    the selected fit at that stage.
    """

    params: ModelParams
    lambda_s: float
    lambda_t: float
    criterion: str
    criterion_value: float
    df: int
    objective_trace: list = field(default_factory=list)
    stage_traces: list = field(default_factory=list)
    n_iterations: dict = field(default_factory=dict)
    converged: bool = True
    homoscedastic_fallback: bool = False
    max_trace_jump: float = 0.0
    history: list = field(default_factory=list)
