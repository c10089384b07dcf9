"""Three-stage fitting and information-criterion tuning.

Stage 1 fits a penalized unweighted least-squares estimate of the mean
coefficients; stage 2 fits the log-variance coefficients to the squared
stage-1 residuals; stage 3 refits the mean with observations reweighted by
the estimated scales.  One "sweep" of the alternation is a (mean fit,
variance fit) pair: sweep 1 is stages 1+2, every later sweep is stages 3+2
with the latest variance estimate.  Each stage is tuned over its own lambda
grid by AIC or BIC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import (
    LINEAR_PREDICTOR_CLIP,
    Dataset,
    FitResult,
    ModelParams,
    SweepSnapshot,
    neg_log_likelihood,
)
from .penalty import FAMILIES, L1, SCAD, PenaltySpec
from .solvers import (
    DegenerateResidualsError,
    LlaResult,
    SolverConfig,
    VarianceProblem,
    WeightedL1Problem,
    lla_solve,
)

AIC = "aic"
BIC = "bic"
CRITERIA = (AIC, BIC)

# Residuals whose mean square falls below this (relative to the response
# scale) are equivalent to an exact fit; the variance stage would be
# unbounded, so the pipeline falls back instead of fitting it.
_DEGENERATE_REL_TOL = 1e-24


def criterion_penalty(kind: str, n: int) -> float:
    """Per-degree-of-freedom complexity charge: 2 for AIC, log n for BIC."""
    if kind == AIC:
        return 2.0
    if kind == BIC:
        return math.log(n)
    raise ValueError(f"unknown criterion {kind!r}")


def information_criterion(d: Dataset, params: ModelParams, kind: str) -> float:
    """Negative log-likelihood plus the complexity charge times df.

    df counts every nonzero coefficient of both vectors, intercepts
    included.
    """
    return neg_log_likelihood(d, params) + criterion_penalty(kind, d.n) * params.df()


@dataclass(frozen=True)
class GridSpec:
    """Candidate lambda grids and the selection criterion.

    Explicit grids must be positive and strictly descending.  When a grid is
    None it is derived from the data: ``n_points`` log-spaced values from
    the smallest lambda that zeroes every penalized coefficient down to a
    floor ratio of that value.  The variance grid's floor is higher by
    default: variance coefficients overfit explosively when p >> n (the
    best of p noise coordinates gains about 2 log p in likelihood, which
    outruns BIC's log n charge), so pushing that grid to tiny lambdas only
    offers candidates that game the criterion.
    """

    lambda_s_grid: np.ndarray | None = None
    lambda_t_grid: np.ndarray | None = None
    criterion: str = BIC
    n_points: int = 30
    min_ratio_s: float = 0.01
    min_ratio_t: float = 0.1

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.n_points < 1 or not 0 < self.min_ratio_s <= 1 or not 0 < self.min_ratio_t <= 1:
            raise ValueError("need n_points >= 1 and floor ratios in (0, 1]")
        for name in ("lambda_s_grid", "lambda_t_grid"):
            g = getattr(self, name)
            if g is None:
                continue
            g = np.asarray(g, dtype=float)
            if g.ndim != 1 or g.size == 0 or np.any(g <= 0):
                raise ValueError(f"{name} must be a non-empty positive vector")
            if g.size > 1 and np.any(np.diff(g) >= 0):
                raise ValueError(f"{name} must be strictly descending")
            object.__setattr__(self, name, g)


@dataclass(frozen=True)
class PipelineConfig:
    """Estimator-level switches.

    ``penalty_family`` selects the estimator ("scad" for the folded-concave
    three-stage fit, "l1" for the baseline).  ``gls_weights`` controls the
    stage-3 observation weights: "paper" divides squared residuals by
    sigma_i, "squared" by sigma_i^2 (textbook GLS).  ``joint_grid`` tunes
    (lambda_s, lambda_t) over the full product grid instead of stagewise.
    """

    penalty_family: str = SCAD
    n_sweeps: int = 2
    solver: SolverConfig = field(default_factory=SolverConfig)
    scad_a: float = 3.7
    gls_weights: str = "paper"
    joint_grid: bool = False

    def __post_init__(self):
        if self.penalty_family not in FAMILIES:
            raise ValueError(f"unknown penalty family {self.penalty_family!r}")
        if self.n_sweeps < 1:
            raise ValueError("n_sweeps must be >= 1")
        if self.gls_weights not in ("paper", "squared"):
            raise ValueError("gls_weights must be 'paper' or 'squared'")


# ---------------------------------------------------------------------------
# lambda grids
# ---------------------------------------------------------------------------


def _log_grid(lam_max: float, n_points: int, min_ratio: float) -> np.ndarray:
    lam_max = max(lam_max, 1e-12)
    if n_points == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_max * min_ratio, n_points)


def mean_lambda_grid(d: Dataset, n_points: int = 30, min_ratio: float = 0.01) -> np.ndarray:
    """Grid for the mean stages, anchored at max_j |X_j'y| / n.

    With a mean intercept the response is centered first, so the anchor is
    the smallest lambda whose solution keeps every penalized coefficient at
    zero with the intercept free.
    """
    y0 = d.y - d.y.mean() if d.has_mean_intercept else d.y
    lam_max = float(np.max(np.abs(d.x.T @ y0))) / d.n
    return _log_grid(lam_max, n_points, min_ratio)


def intercept_only_theta(d: Dataset, sq_resid: np.ndarray) -> np.ndarray:
    """Variance parameters with only the intercept fit: theta_0 = log(mean e^2).

    Without a variance intercept this is the zero vector.  The log is
    clipped to the model's linear-predictor range.
    """
    theta = np.zeros(d.n_var_coefs)
    if d.has_var_intercept:
        m = max(float(np.mean(sq_resid)), np.finfo(float).tiny)
        theta[0] = float(np.clip(np.log(m), -LINEAR_PREDICTOR_CLIP, LINEAR_PREDICTOR_CLIP))
    return theta


def variance_lambda_grid(
    d: Dataset, sq_resid: np.ndarray, n_points: int = 30, min_ratio: float = 0.1
) -> np.ndarray:
    """Grid for the variance stage, anchored at the zero-solution threshold.

    The anchor is max_j |g_j| / 4 where g is the gradient of the smooth
    variance objective at theta = 0 (intercept profiled out first when
    present); beyond it the all-zero solution is stationary.
    """
    theta0 = intercept_only_theta(d, sq_resid)
    offset = theta0[0] if d.has_var_intercept else 0.0
    u = sq_resid * math.exp(-offset)
    g = (d.x.sum(axis=0) - u @ d.x) / d.n
    lam_max = float(np.max(np.abs(g))) / 4.0
    return _log_grid(lam_max, n_points, min_ratio)


# ---------------------------------------------------------------------------
# single-lambda stage fits
# ---------------------------------------------------------------------------


def _mean_unpenalized(d: Dataset):
    return (0,) if d.has_mean_intercept else ()


def _var_unpenalized(d: Dataset):
    return (0,) if d.has_var_intercept else ()


def fit_stage1(
    d: Dataset,
    spec: PenaltySpec,
    cfg: SolverConfig,
    warm: np.ndarray | None = None,
) -> LlaResult:
    """Penalized unweighted least squares for the mean coefficients."""
    prob = WeightedL1Problem(d.mean_design, d.y, np.ones(d.n))
    return lla_solve(prob, spec, cfg, warm=warm, unpenalized=_mean_unpenalized(d))


def squared_residuals(d: Dataset, beta_coef: np.ndarray) -> np.ndarray:
    eta = d.y - d.mean_design @ np.asarray(beta_coef, dtype=float)
    return eta * eta


def _is_degenerate(d: Dataset, sq_resid: np.ndarray) -> bool:
    return float(np.mean(sq_resid)) <= _DEGENERATE_REL_TOL * max(
        1.0, float(np.mean(d.y * d.y))
    )


def fit_stage2(
    d: Dataset,
    beta_coef: np.ndarray,
    spec: PenaltySpec,
    cfg: SolverConfig,
    warm: np.ndarray | None = None,
) -> LlaResult:
    """Penalized variance pseudolikelihood on the squared residuals of beta."""
    sq = squared_residuals(d, beta_coef)
    if _is_degenerate(d, sq):
        raise DegenerateResidualsError(
            "degenerate residuals: mean squared residual is numerically zero"
        )
    prob = VarianceProblem(d.var_design, sq)
    if warm is None:
        warm = intercept_only_theta(d, sq)
    return lla_solve(prob, spec, cfg, warm=warm, unpenalized=_var_unpenalized(d))


def fit_stage3(
    d: Dataset,
    theta_coef: np.ndarray,
    spec: PenaltySpec,
    cfg: SolverConfig,
    gls_weights: str = "paper",
    warm: np.ndarray | None = None,
) -> LlaResult:
    """Reweighted penalized least squares for the mean.

    Observation weights are 1/sigma_i with sigma_i = exp(x_i'theta / 2)
    (squared residuals divided by sigma_i, as the three-stage objective
    prescribes); ``gls_weights="squared"`` uses 1/sigma_i^2 instead.
    """
    z = np.clip(
        d.var_design @ np.asarray(theta_coef, dtype=float),
        -LINEAR_PREDICTOR_CLIP,
        LINEAR_PREDICTOR_CLIP,
    )
    sigma = np.exp(0.5 * z)
    w = 1.0 / sigma if gls_weights == "paper" else 1.0 / (sigma * sigma)
    prob = WeightedL1Problem(d.mean_design, d.y, w)
    return lla_solve(prob, spec, cfg, warm=warm, unpenalized=_mean_unpenalized(d))


# ---------------------------------------------------------------------------
# path fitting and selection
# ---------------------------------------------------------------------------


@dataclass
class PathPoint:
    """One lambda on a tuning path with its likelihood proxy and df."""

    lam: float
    result: LlaResult
    nll: float
    df: int


def select_path(points: list[PathPoint], kind: str, n: int) -> int:
    """Index of the criterion-minimizing point.

    Ties prefer smaller df, then larger lambda; paths are fit in descending
    lambda order, so the earliest index wins the final tie-break.
    """
    pen = criterion_penalty(kind, n)
    best = 0
    best_key = (points[0].nll + pen * points[0].df, points[0].df, 0)
    for i, pt in enumerate(points[1:], start=1):
        key = (pt.nll + pen * pt.df, pt.df, i)
        if key < best_key:
            best, best_key = i, key
    return best


def _plugin_nll_df(d: Dataset, beta_coef: np.ndarray) -> tuple[float, int]:
    """Stage-1 selection score pieces: likelihood at the residual-scale MLE.

    Stage 1 has no variance estimate yet, so the criterion plugs in the
    single free log-variance theta_0 = log(mean squared residual), which
    puts the likelihood on the right scale without biasing the comparison
    across lambdas (the plug-in contributes one df to every candidate).
    """
    sq = squared_residuals(d, beta_coef)
    m = max(float(np.mean(sq)), np.finfo(float).tiny)
    t0 = float(np.clip(np.log(m), -LINEAR_PREDICTOR_CLIP, LINEAR_PREDICTOR_CLIP))
    nll = d.n * t0 + math.exp(-t0) * float(np.sum(sq))
    df = int(np.count_nonzero(beta_coef)) + 1
    return nll, df


def mean_path_stage1(
    d: Dataset, lambdas: np.ndarray, family: str, cfg: PipelineConfig
) -> list[PathPoint]:
    points = []
    warm = None
    for lam in lambdas:
        res = fit_stage1(d, PenaltySpec(family, lam, cfg.scad_a), cfg.solver, warm=warm)
        warm = res.coef
        nll, df = _plugin_nll_df(d, res.coef)
        points.append(PathPoint(float(lam), res, nll, df))
    return points


def variance_path(
    d: Dataset,
    beta_coef: np.ndarray,
    lambdas: np.ndarray,
    family: str,
    cfg: PipelineConfig,
) -> list[PathPoint]:
    points = []
    warm = None
    beta_coef = np.asarray(beta_coef, dtype=float)
    for lam in lambdas:
        res = fit_stage2(d, beta_coef, PenaltySpec(family, lam, cfg.scad_a), cfg.solver, warm=warm)
        warm = res.coef
        params = ModelParams(beta_coef, res.coef)
        points.append(PathPoint(float(lam), res, neg_log_likelihood(d, params), params.df()))
    return points


def mean_path_stage3(
    d: Dataset,
    theta_coef: np.ndarray,
    lambdas: np.ndarray,
    family: str,
    cfg: PipelineConfig,
) -> list[PathPoint]:
    points = []
    warm = None
    theta_coef = np.asarray(theta_coef, dtype=float)
    for lam in lambdas:
        res = fit_stage3(
            d,
            theta_coef,
            PenaltySpec(family, lam, cfg.scad_a),
            cfg.solver,
            gls_weights=cfg.gls_weights,
            warm=warm,
        )
        warm = res.coef
        params = ModelParams(res.coef, theta_coef)
        points.append(PathPoint(float(lam), res, neg_log_likelihood(d, params), params.df()))
    return points


# ---------------------------------------------------------------------------
# full drivers
# ---------------------------------------------------------------------------


def _mean_grid(d: Dataset, grid: GridSpec) -> np.ndarray:
    if grid.lambda_s_grid is not None:
        return grid.lambda_s_grid
    return mean_lambda_grid(d, grid.n_points, grid.min_ratio_s)


def _var_grid(d: Dataset, sq_resid: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.lambda_t_grid is not None:
        return grid.lambda_t_grid
    return variance_lambda_grid(d, sq_resid, grid.n_points, grid.min_ratio_t)


def _finalize(
    d: Dataset,
    kind: str,
    beta: np.ndarray,
    theta: np.ndarray,
    lam_s: float,
    lam_t: float,
    stage_traces: list,
    n_iterations: dict,
    converged: bool,
    history: list,
    fallback: bool = False,
) -> FitResult:
    params = ModelParams(beta, theta)
    flat_trace: list[float] = []
    jump = 0.0
    for _, tr in stage_traces:
        flat_trace.extend(tr)
        for a, b in zip(tr, tr[1:]):
            jump = max(jump, (b - a) / max(1.0, abs(a)))
    return FitResult(
        params=params,
        lambda_s=lam_s,
        lambda_t=lam_t,
        criterion=kind,
        criterion_value=information_criterion(d, params, kind),
        df=params.df(),
        objective_trace=flat_trace,
        stage_traces=stage_traces,
        n_iterations=n_iterations,
        converged=converged,
        homoscedastic_fallback=fallback,
        max_trace_jump=jump,
        history=history,
    )


def fit_hippo(
    d: Dataset, grid: GridSpec | None = None, cfg: PipelineConfig | None = None
) -> FitResult:
    """Tuned three-stage fit.

    Stage 1 is tuned over the lambda_s grid, stage 2 over the lambda_t grid
    with the stage-1 mean fixed, and each later sweep re-tunes stage 3 over
    the lambda_s grid (variance fixed) and stage 2 over the lambda_t grid
    (mean fixed).  ``cfg.n_sweeps`` counts (mean, variance) sweeps, so the
    default 2 produces the reweighted estimate plus a refreshed variance.

    Numerically-zero stage-1 residuals leave the variance stage unbounded;
    the fit then returns the stage-1 mean with the intercept-only variance
    and ``homoscedastic_fallback=True``.
    """
    grid = grid if grid is not None else GridSpec()
    cfg = cfg if cfg is not None else PipelineConfig()
    kind = grid.criterion
    family = cfg.penalty_family
    if cfg.joint_grid:
        return _fit_joint_grid(d, grid, cfg)

    lam_s_grid = _mean_grid(d, grid)

    path1 = mean_path_stage1(d, lam_s_grid, family, cfg)
    sel1 = select_path(path1, kind, d.n)
    beta = path1[sel1].result.coef
    lam_s = path1[sel1].lam
    stage_traces = [("stage1", path1[sel1].result.objective_trace)]
    n_iterations = {"stage1": sum(path1[sel1].result.inner_iterations)}
    converged = path1[sel1].result.converged

    sq = squared_residuals(d, beta)
    if _is_degenerate(d, sq):
        theta = intercept_only_theta(d, sq)
        history = [SweepSnapshot(1, beta, theta, lam_s, math.nan)]
        return _finalize(
            d, kind, beta, theta, lam_s, math.nan, stage_traces, n_iterations,
            converged, history, fallback=True,
        )

    lam_t_grid = _var_grid(d, sq, grid)
    path2 = variance_path(d, beta, lam_t_grid, family, cfg)
    sel2 = select_path(path2, kind, d.n)
    theta = path2[sel2].result.coef
    lam_t = path2[sel2].lam
    stage_traces.append(("stage2.1", path2[sel2].result.objective_trace))
    n_iterations["stage2.1"] = sum(path2[sel2].result.inner_iterations)
    converged = converged and path2[sel2].result.converged

    history = [SweepSnapshot(1, beta, theta, lam_s, lam_t)]

    for sweep in range(2, cfg.n_sweeps + 1):
        path3 = mean_path_stage3(d, theta, lam_s_grid, family, cfg)
        sel3 = select_path(path3, kind, d.n)
        beta = path3[sel3].result.coef
        lam_s = path3[sel3].lam
        stage_traces.append((f"stage3.{sweep}", path3[sel3].result.objective_trace))
        n_iterations[f"stage3.{sweep}"] = sum(path3[sel3].result.inner_iterations)
        converged = converged and path3[sel3].result.converged

        sq = squared_residuals(d, beta)
        if _is_degenerate(d, sq):
            # exact refit: keep the previous variance estimate and stop
            history.append(SweepSnapshot(sweep, beta, theta, lam_s, lam_t))
            break
        path2 = variance_path(d, beta, lam_t_grid, family, cfg)
        sel2 = select_path(path2, kind, d.n)
        theta = path2[sel2].result.coef
        lam_t = path2[sel2].lam
        stage_traces.append((f"stage2.{sweep}", path2[sel2].result.objective_trace))
        n_iterations[f"stage2.{sweep}"] = sum(path2[sel2].result.inner_iterations)
        converged = converged and path2[sel2].result.converged
        history.append(SweepSnapshot(sweep, beta, theta, lam_s, lam_t))

    return _finalize(
        d, kind, beta, theta, lam_s, lam_t, stage_traces, n_iterations, converged, history
    )


def fit_hhr(
    d: Dataset, grid: GridSpec | None = None, cfg: PipelineConfig | None = None
) -> FitResult:
    """The l1 baseline: the identical driver with the l1 penalty."""
    cfg = cfg if cfg is not None else PipelineConfig()
    return fit_hippo(d, grid, replace(cfg, penalty_family=L1))


def fit_variance_given_beta(
    d: Dataset,
    beta_coef: np.ndarray,
    grid: GridSpec | None = None,
    cfg: PipelineConfig | None = None,
) -> FitResult:
    """Tune the variance stage alone with the mean coefficients known."""
    grid = grid if grid is not None else GridSpec()
    cfg = cfg if cfg is not None else PipelineConfig()
    beta_coef = np.asarray(beta_coef, dtype=float)
    sq = squared_residuals(d, beta_coef)
    if _is_degenerate(d, sq):
        raise DegenerateResidualsError(
            "degenerate residuals: mean squared residual is numerically zero"
        )
    lam_t_grid = _var_grid(d, sq, grid)
    path = variance_path(d, beta_coef, lam_t_grid, cfg.penalty_family, cfg)
    sel = select_path(path, grid.criterion, d.n)
    pt = path[sel]
    history = [SweepSnapshot(1, beta_coef, pt.result.coef, math.nan, pt.lam)]
    return _finalize(
        d,
        grid.criterion,
        beta_coef,
        pt.result.coef,
        math.nan,
        pt.lam,
        [("stage2.1", pt.result.objective_trace)],
        {"stage2.1": sum(pt.result.inner_iterations)},
        pt.result.converged,
        history,
    )


def _fit_joint_grid(d: Dataset, grid: GridSpec, cfg: PipelineConfig) -> FitResult:
    """Exhaustive product-grid tuning (fidelity mode; stagewise is default).

    Runs the fixed-lambda pipeline for every (lambda_s, lambda_t) pair and
    keeps the pair whose final parameters minimize the criterion.  The
    lambda_t grid, when derived, uses the residuals of the sparsest stage-1
    fit so it does not depend on the pair under evaluation.
    """
    kind = grid.criterion
    family = cfg.penalty_family
    lam_s_grid = _mean_grid(d, grid)
    top = fit_stage1(d, PenaltySpec(family, float(lam_s_grid[0]), cfg.scad_a), cfg.solver)
    sq_top = squared_residuals(d, top.coef)
    if grid.lambda_t_grid is not None:
        lam_t_grid = grid.lambda_t_grid
    elif _is_degenerate(d, sq_top):
        lam_t_grid = _log_grid(1e-12, grid.n_points, grid.min_ratio_t)
    else:
        lam_t_grid = variance_lambda_grid(d, sq_top, grid.n_points, grid.min_ratio_t)

    best = None
    best_key = None
    for i, lam_s in enumerate(lam_s_grid):
        spec_s = PenaltySpec(family, float(lam_s), cfg.scad_a)
        s1 = fit_stage1(d, spec_s, cfg.solver)
        for j, lam_t in enumerate(lam_t_grid):
            spec_t = PenaltySpec(family, float(lam_t), cfg.scad_a)
            beta = s1.coef
            stage_traces = [("stage1", s1.objective_trace)]
            n_iterations = {"stage1": sum(s1.inner_iterations)}
            converged = s1.converged
            fallback = False
            sq = squared_residuals(d, beta)
            if _is_degenerate(d, sq):
                theta = intercept_only_theta(d, sq)
                fallback = True
                history = [SweepSnapshot(1, beta, theta, float(lam_s), math.nan)]
            else:
                s2 = fit_stage2(d, beta, spec_t, cfg.solver)
                theta = s2.coef
                stage_traces.append(("stage2.1", s2.objective_trace))
                n_iterations["stage2.1"] = sum(s2.inner_iterations)
                converged = converged and s2.converged
                history = [SweepSnapshot(1, beta, theta, float(lam_s), float(lam_t))]
                for sweep in range(2, cfg.n_sweeps + 1):
                    s3 = fit_stage3(d, theta, spec_s, cfg.solver, cfg.gls_weights)
                    beta = s3.coef
                    stage_traces.append((f"stage3.{sweep}", s3.objective_trace))
                    n_iterations[f"stage3.{sweep}"] = sum(s3.inner_iterations)
                    converged = converged and s3.converged
                    sq = squared_residuals(d, beta)
                    if _is_degenerate(d, sq):
                        history.append(SweepSnapshot(sweep, beta, theta, float(lam_s), float(lam_t)))
                        break
                    s2 = fit_stage2(d, beta, spec_t, cfg.solver)
                    theta = s2.coef
                    stage_traces.append((f"stage2.{sweep}", s2.objective_trace))
                    n_iterations[f"stage2.{sweep}"] = sum(s2.inner_iterations)
                    converged = converged and s2.converged
                    history.append(SweepSnapshot(sweep, beta, theta, float(lam_s), float(lam_t)))
            cand = _finalize(
                d, kind, beta, theta, float(lam_s),
                math.nan if fallback else float(lam_t),
                stage_traces, n_iterations, converged, history, fallback,
            )
            key = (cand.criterion_value, cand.df, i, j)
            if best_key is None or key < best_key:
                best, best_key = cand, key
    return best
