"""Support metrics, cross-validated evaluation, and diagnostics."""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from .model import Dataset, ModelParams, neg_log_likelihood_terms, predict_mean
from .pipeline import GridSpec, PipelineConfig, fit_hippo
from .solvers import DegenerateResidualsError


class SupportMetrics(NamedTuple):
    precision: float
    recall: float


def support_metrics(estimated, truth) -> SupportMetrics:
    """Precision |S_hat & S| / |S_hat| and recall |S_hat & S| / |S|.

    Pass coefficient vectors without intercept entries.  Conventions for
    empty sets: with nothing selected, precision is 1 if the true support
    is also empty and 0 otherwise; with an empty true support, recall is 1.
    """
    est = np.asarray(estimated, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValueError("estimated and truth must have equal length")
    sel = est != 0.0
    true = tru != 0.0
    hits = int(np.count_nonzero(sel & true))
    n_sel = int(np.count_nonzero(sel))
    n_true = int(np.count_nonzero(true))
    if n_sel == 0:
        precision = 1.0 if n_true == 0 else 0.0
    else:
        precision = hits / n_sel
    recall = 1.0 if n_true == 0 else hits / n_true
    return SupportMetrics(precision, recall)


# ---------------------------------------------------------------------------
# k-fold cross validation
# ---------------------------------------------------------------------------


@dataclass
class CvResult:
    """Averages across folds of the held-out evaluation metrics.

    ``partial_prediction_score`` is the mean held-out negative
    log-likelihood per observation under the fitted mean and variance;
    support sizes exclude intercepts.
    """

    mse: float
    partial_prediction_score: float
    mean_support_beta: float
    mean_support_theta: float
    n_folds_used: int
    skipped_folds: list = field(default_factory=list)
    fold_mse: list = field(default_factory=list)
    fold_pps: list = field(default_factory=list)


def _fold_metrics(args):
    d, grid, cfg, test_idx, fold_no = args
    n = d.n
    train_idx = np.setdiff1d(np.arange(n), test_idx)
    train = d.subset(train_idx)
    test = d.subset(test_idx)
    try:
        fit = fit_hippo(train, grid, cfg)
    except DegenerateResidualsError as exc:
        return fold_no, None, str(exc)
    params = fit.params
    err = test.y - predict_mean(test, params)
    mse = float(np.mean(err * err))
    pps = float(np.mean(neg_log_likelihood_terms(test, params)))
    skip_b = 1 if d.has_mean_intercept else 0
    skip_t = 1 if d.has_var_intercept else 0
    s_size = int(np.count_nonzero(params.beta[skip_b:]))
    t_size = int(np.count_nonzero(params.theta[skip_t:]))
    return fold_no, (mse, pps, s_size, t_size), None


def kfold_cv(
    d: Dataset,
    k: int,
    grid: GridSpec | None = None,
    cfg: PipelineConfig | None = None,
    seed: int = 1729,
    jobs: int = 1,
) -> CvResult:
    """k-fold cross validation of the tuned fit.

    Rows are shuffled once with the given seed and split into k contiguous
    blocks.  Each fold fits on the remaining rows and scores on the held
    out block; a fold whose fit degenerates is skipped and reported in
    ``skipped_folds``.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if d.n < k:
        raise ValueError(f"need at least k={k} rows, got {d.n}")
    grid = grid if grid is not None else GridSpec()
    cfg = cfg if cfg is not None else PipelineConfig()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    perm = rng.permutation(d.n)
    blocks = np.array_split(perm, k)
    args = [(d, grid, cfg, np.sort(block), i) for i, block in enumerate(blocks)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_fold_metrics, args))
    else:
        outcomes = [_fold_metrics(a) for a in args]
    outcomes.sort(key=lambda t: t[0])

    res = CvResult(0.0, 0.0, 0.0, 0.0, 0)
    sums = np.zeros(4)
    for fold_no, metrics, err in outcomes:
        if metrics is None:
            res.skipped_folds.append((fold_no, err))
            continue
        sums += np.asarray(metrics)
        res.fold_mse.append(metrics[0])
        res.fold_pps.append(metrics[1])
        res.n_folds_used += 1
    if res.n_folds_used == 0:
        raise RuntimeError("every fold degenerated; nothing to average")
    res.mse, res.partial_prediction_score, res.mean_support_beta, res.mean_support_theta = (
        sums / res.n_folds_used
    ).tolist()
    return res


# ---------------------------------------------------------------------------
# heteroscedasticity diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinSummary:
    index: int
    lower: float
    upper: float
    count: int
    mean: float
    variance: float


@dataclass(frozen=True)
class VarianceFTest:
    bin_a: int
    bin_b: int
    statistic: float
    df1: int
    df2: int
    p_value: float


@dataclass
class DiagnosticsResult:
    bins: list
    f_tests: list


def heteroscedasticity_diagnostics(
    fitted, residuals, scale=None, bins=()
) -> DiagnosticsResult:
    """Bin studentized residuals by fitted value and F-test the variances.

    `bins` are interior breakpoints on the fitted values (k breakpoints
    make k+1 bins).  Residuals are studentized by `scale` (scalar or
    per-observation vector); by default the global root mean squared
    residual is used rather than a leverage-adjusted scale.  Bins with
    fewer than two points are dropped with a warning.  For every surviving
    pair, the statistic is the larger sample variance over the smaller,
    with the matching (n-1, n-1) degrees of freedom, and the two-sided
    p-value comes from the F distribution (a regularized incomplete beta
    under the hood).
    """
    fitted = np.asarray(fitted, dtype=float)
    resid = np.asarray(residuals, dtype=float)
    if fitted.shape != resid.shape or fitted.ndim != 1:
        raise ValueError("fitted and residuals must be equal-length vectors")
    breaks = np.asarray(bins, dtype=float)
    if breaks.ndim != 1 or breaks.size < 1:
        raise ValueError("need at least one breakpoint")
    if np.any(np.diff(breaks) <= 0):
        raise ValueError("breakpoints must be strictly increasing")
    if scale is None:
        s = float(np.sqrt(np.mean(resid * resid)))
        if s == 0.0:
            raise ValueError("all residuals are zero; nothing to studentize")
    else:
        s = np.asarray(scale, dtype=float)
        if np.any(s <= 0):
            raise ValueError("scale must be positive")
    stud = resid / s

    edges = np.concatenate([[-np.inf], breaks, [np.inf]])
    which = np.digitize(fitted, breaks)
    summaries = []
    for b in range(breaks.size + 1):
        members = stud[which == b]
        if members.size < 2:
            if members.size:
                warnings.warn(
                    f"bin {b} has {members.size} point(s); excluded from F-tests",
                    stacklevel=2,
                )
            continue
        summaries.append(
            BinSummary(
                index=b,
                lower=float(edges[b]),
                upper=float(edges[b + 1]),
                count=int(members.size),
                mean=float(np.mean(members)),
                variance=float(np.var(members, ddof=1)),
            )
        )
    if len(summaries) < 2:
        raise ValueError("need at least two bins with two or more points")

    tests = []
    for i in range(len(summaries)):
        for j in range(i + 1, len(summaries)):
            hi, lo = summaries[i], summaries[j]
            if lo.variance > hi.variance:
                hi, lo = lo, hi
            f = hi.variance / lo.variance if lo.variance > 0 else np.inf
            df1, df2 = hi.count - 1, lo.count - 1
            cdf = stats.f.cdf(f, df1, df2)
            p = float(min(1.0, 2.0 * min(cdf, 1.0 - cdf)))
            tests.append(
                VarianceFTest(
                    bin_a=summaries[i].index,
                    bin_b=summaries[j].index,
                    statistic=float(f),
                    df1=df1,
                    df2=df2,
                    p_value=p,
                )
            )
    return DiagnosticsResult(bins=summaries, f_tests=tests)


def f_cdf(x: float, df1: int, df2: int) -> float:
    """CDF of the F distribution (regularized incomplete beta)."""
    return float(stats.f.cdf(x, df1, df2))


# ---------------------------------------------------------------------------
# asymptotic-normality sanity check
# ---------------------------------------------------------------------------


def oracle_normality_check(
    reps: int,
    n: int,
    s: int = 2,
    theta=None,
    direction=None,
    seed: int = 0,
) -> float:
    """KS distance of the standardized oracle mean estimate to N(0, 1).

    Draws one fixed design X (n x (s+1) standard normal columns), then over
    `reps` replicates simulates y with a log-linear variance, refits the
    mean on the true support only (unpenalized least squares) and
    standardizes a'(beta_hat - beta) by sqrt(zeta^2 / n), where zeta^2 is
    the plug-in sandwich a' S^-1 M S^-1 a with S = X_s'X_s/n and
    M = X_s' diag(sigma_i^2) X_s / n, sigma_i^2 = exp(x_i' theta).  With
    theta = 0 this is the classical homoscedastic OLS check.
    """
    if reps < 1 or n < s + 2:
        raise ValueError("need reps >= 1 and n > s + 1")
    n_cols = s + 1
    rng0 = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    x = rng0.standard_normal((n, n_cols))
    beta_s = np.array([(-1.0) ** j * (1.0 + 0.5 * j) for j in range(s)])
    if theta is None:
        theta = np.zeros(n_cols)
        theta[0] = 0.5
        theta[-1] = 0.3
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n_cols,):
        raise ValueError(f"theta must have length {n_cols}")
    a = (
        np.full(s, 1.0 / np.sqrt(s))
        if direction is None
        else np.asarray(direction, dtype=float)
    )

    xs = x[:, :s]
    sigma2 = np.exp(np.clip(x @ theta, -30.0, 30.0))
    sigma = np.sqrt(sigma2)
    gram = xs.T @ xs / n
    meat = xs.T @ (sigma2[:, None] * xs) / n
    bread_a = np.linalg.solve(gram, a)
    zeta2 = float(bread_a @ meat @ bread_a)

    zstats = np.empty(reps)
    mean = xs @ beta_s
    for r in range(reps):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, r)))
        y = mean + sigma * rng.standard_normal(n)
        bhat, *_ = np.linalg.lstsq(xs, y, rcond=None)
        zstats[r] = np.sqrt(n / zeta2) * float(a @ (bhat - beta_s))

    zstats.sort()
    cdf = stats.norm.cdf(zstats)
    grid_hi = np.arange(1, reps + 1) / reps
    grid_lo = np.arange(0, reps) / reps
    return float(max(np.max(grid_hi - cdf), np.max(cdf - grid_lo)))
