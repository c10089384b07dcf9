"""Benchmark data generators and the Monte Carlo harness.

Two synthetic designs are built in:

* design 1: pure variance signal.  The log variance is X1 + X2 + X3 with
  the first three covariates equicorrelated at rho, the rest independent
  standard normal, and the mean identically zero (and known to the
  estimators, which therefore fit the variance stage only).
* design 2: joint mean/variance signal with AR(1) covariates
  (cov(X_i, X_j) = 0.5^|i-j|), p = 600, and intercepts beta_0 = 2,
  theta_0 = 1.  Fits record both the first and second sweep.

Reproducibility: replicate r of a run seeds an independent PCG64 stream via
``numpy.random.SeedSequence(master_seed, spawn_key=(r,))``; normal draws
use ``Generator.standard_normal`` (ziggurat).  Records are keyed by
replicate index, so results are identical for any worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .evaluate import support_metrics
from .model import Dataset, ModelParams
from .penalty import L1, SCAD
from .pipeline import (
    CRITERIA,
    GridSpec,
    PipelineConfig,
    fit_hippo,
    select_path,
    variance_lambda_grid,
    variance_path,
)

EXAMPLE1 = "ex1"
EXAMPLE2 = "ex2"
CUSTOM = "custom"
METHODS = ("hippo", "hhr")
_FAMILY = {"hippo": SCAD, "hhr": L1}

EX2_P = 600
EX2_BETA0 = 2.0
EX2_THETA0 = 1.0
EX2_BETA_HEAD = (3.0, 3.0, 3.0, 1.5, 1.5, 1.5, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0)
EX2_THETA_HEAD = (1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.75, 0.75, 0.75)


@dataclass(frozen=True)
class TrueModel:
    """Generating coefficients, aligned with the Dataset's intercept layout."""

    beta_star: np.ndarray
    theta_star: np.ndarray
    covariance: str

    def params(self) -> ModelParams:
        return ModelParams(self.beta_star, self.theta_star)


def replicate_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Independent, platform-stable substream seed for one replicate."""
    return np.random.SeedSequence(master_seed, spawn_key=(index,))


def generate_example1(n: int, p: int, rho: float, seed) -> tuple[Dataset, TrueModel]:
    """Pure variance-signal design: y = exp((x1+x2+x3)/2) * eps, beta = 0.

    The first three covariates are jointly normal with pairwise correlation
    rho (unit marginals, sampled through the Cholesky factor of the 3x3
    equicorrelation matrix); the rest are independent standard normals.
    In the model parameterization log sigma^2 = x'theta, the true theta is
    (1, 1, 1, 0, ..., 0).  No intercepts.
    """
    if p < 3:
        raise ValueError("design 1 needs p >= 3")
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    corr = np.full((3, 3), rho) + (1.0 - rho) * np.eye(3)
    chol = np.linalg.cholesky(corr)
    head = rng.standard_normal((n, 3)) @ chol.T
    tail = rng.standard_normal((n, p - 3))
    x = np.hstack([head, tail])
    eps = rng.standard_normal(n)
    y = np.exp(0.5 * (x[:, 0] + x[:, 1] + x[:, 2])) * eps
    theta = np.zeros(p)
    theta[:3] = 1.0
    model = TrueModel(np.zeros(p), theta, f"equicorrelated(rho={rho})")
    return Dataset(x, y, False, False), model


def generate_example2(n: int, seed) -> tuple[Dataset, TrueModel]:
    """Joint mean/variance design with AR(1) covariates and intercepts.

    Covariates follow X_1 = Z_1, X_j = 0.5 X_{j-1} + sqrt(0.75) Z_j, giving
    unit marginals and cov(X_i, X_j) = 0.5^|i-j|.  The response is
    y = 2 + x'beta + exp((1 + x'theta)/2) eps, i.e. the log variance is
    1 + x'theta, matching the log-linear parameterization used throughout.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    p = EX2_P
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, p))
    x = np.empty((n, p))
    x[:, 0] = z[:, 0]
    decay = np.sqrt(1.0 - 0.25)
    for j in range(1, p):
        x[:, j] = 0.5 * x[:, j - 1] + decay * z[:, j]
    beta = np.zeros(p + 1)
    beta[0] = EX2_BETA0
    beta[1 : 1 + len(EX2_BETA_HEAD)] = EX2_BETA_HEAD
    theta = np.zeros(p + 1)
    theta[0] = EX2_THETA0
    theta[1 : 1 + len(EX2_THETA_HEAD)] = EX2_THETA_HEAD
    eps = rng.standard_normal(n)
    mean = beta[0] + x @ beta[1:]
    logvar = theta[0] + x @ theta[1:]
    y = mean + np.exp(0.5 * logvar) * eps
    model = TrueModel(beta, theta, "ar1(0.5)")
    return Dataset(x, y, True, True), model


@dataclass(frozen=True)
class SimulationSpec:
    """What to simulate: design, sizes, replicate count, seed, estimators.

    ``estimators`` pairs a method ("hippo" or "hhr") with a criterion
    ("aic" or "bic").  A custom design supplies ``generator(spec, seed)``
    returning (Dataset, TrueModel); it must be a module-level function if
    replicates are to run in parallel workers.
    """

    example: str
    n: int = 200
    p: int = 2000
    rho: float = 0.0
    reps: int = 100
    master_seed: int = 1729
    estimators: tuple = (
        ("hippo", "aic"),
        ("hippo", "bic"),
        ("hhr", "aic"),
        ("hhr", "bic"),
    )
    generator: Callable | None = None

    def __post_init__(self):
        if self.example not in (EXAMPLE1, EXAMPLE2, CUSTOM):
            raise ValueError(f"unknown example {self.example!r}")
        if min(self.n, self.p, self.reps) < 1:
            raise ValueError("n, p, reps must be >= 1")
        if self.example == CUSTOM and self.generator is None:
            raise ValueError("custom simulations need a generator")
        for method, crit in self.estimators:
            if method not in METHODS or crit not in CRITERIA:
                raise ValueError(f"unknown estimator {(method, crit)!r}")


@dataclass(frozen=True)
class ReplicateRecord:
    """Metrics of one estimator on one replicate at one sweep."""

    replicate: int
    method: str
    criterion: str
    iteration: int
    beta_err: float
    theta_err: float
    precision_beta: float
    recall_beta: float
    precision_theta: float
    recall_theta: float
    lambda_s: float
    lambda_t: float
    df: int
    converged: bool
    max_trace_jump: float


def _coef_metrics(est: np.ndarray, truth: np.ndarray, has_intercept: bool):
    err = float(np.linalg.norm(est - truth))
    skip = 1 if has_intercept else 0
    m = support_metrics(est[skip:], truth[skip:])
    return err, m.precision, m.recall


def _generate(spec: SimulationSpec, r: int) -> tuple[Dataset, TrueModel]:
    seed = replicate_seed(spec.master_seed, r)
    if spec.example == EXAMPLE1:
        return generate_example1(spec.n, spec.p, spec.rho, seed)
    if spec.example == EXAMPLE2:
        return generate_example2(spec.n, seed)
    return spec.generator(spec, seed)


def _replicate_records(
    spec: SimulationSpec, cfg: PipelineConfig, grid: GridSpec, r: int
) -> list[ReplicateRecord]:
    d, truth = _generate(spec, r)
    records = []
    if spec.example == EXAMPLE1:
        # The mean is known, so only the variance stage runs; the lambda
        # path is shared between criteria and selected twice.
        lam_t_grid = (
            grid.lambda_t_grid
            if grid.lambda_t_grid is not None
            else variance_lambda_grid(d, d.y**2, grid.n_points, grid.min_ratio_t)
        )
        by_method = {}
        for method, crit in spec.estimators:
            if method not in by_method:
                family_cfg = PipelineConfig(
                    penalty_family=_FAMILY[method],
                    n_sweeps=1,
                    solver=cfg.solver,
                    scad_a=cfg.scad_a,
                    gls_weights=cfg.gls_weights,
                )
                by_method[method] = variance_path(
                    d, truth.beta_star, lam_t_grid, _FAMILY[method], family_cfg
                )
            path = by_method[method]
            sel = select_path(path, crit, d.n)
            pt = path[sel]
            t_err, t_pre, t_rec = _coef_metrics(
                pt.result.coef, truth.theta_star, d.has_var_intercept
            )
            records.append(
                ReplicateRecord(
                    replicate=r,
                    method=method,
                    criterion=crit,
                    iteration=1,
                    beta_err=float("nan"),
                    theta_err=t_err,
                    precision_beta=float("nan"),
                    recall_beta=float("nan"),
                    precision_theta=t_pre,
                    recall_theta=t_rec,
                    lambda_s=float("nan"),
                    lambda_t=pt.lam,
                    df=pt.df,
                    converged=pt.result.converged,
                    max_trace_jump=pt.result.max_trace_jump,
                )
            )
        return records

    for method, crit in spec.estimators:
        fit_cfg = PipelineConfig(
            penalty_family=_FAMILY[method],
            n_sweeps=cfg.n_sweeps,
            solver=cfg.solver,
            scad_a=cfg.scad_a,
            gls_weights=cfg.gls_weights,
            joint_grid=cfg.joint_grid,
        )
        fit_grid = GridSpec(
            lambda_s_grid=grid.lambda_s_grid,
            lambda_t_grid=grid.lambda_t_grid,
            criterion=crit,
            n_points=grid.n_points,
            min_ratio_s=grid.min_ratio_s,
            min_ratio_t=grid.min_ratio_t,
        )
        fit = fit_hippo(d, fit_grid, fit_cfg)
        for snap in fit.history:
            b_err, b_pre, b_rec = _coef_metrics(
                snap.beta, truth.beta_star, d.has_mean_intercept
            )
            t_err, t_pre, t_rec = _coef_metrics(
                snap.theta, truth.theta_star, d.has_var_intercept
            )
            records.append(
                ReplicateRecord(
                    replicate=r,
                    method=method,
                    criterion=crit,
                    iteration=snap.iteration,
                    beta_err=b_err,
                    theta_err=t_err,
                    precision_beta=b_pre,
                    recall_beta=b_rec,
                    precision_theta=t_pre,
                    recall_theta=t_rec,
                    lambda_s=snap.lambda_s,
                    lambda_t=snap.lambda_t,
                    df=fit.df,
                    converged=fit.converged,
                    max_trace_jump=fit.max_trace_jump,
                )
            )
    return records


def _replicate_worker(args):
    spec, cfg, grid, r = args
    try:
        return r, _replicate_records(spec, cfg, grid, r), None
    except Exception as exc:  # replicate failures are recorded, not fatal
        return r, [], f"{type(exc).__name__}: {exc}"


_METRIC_FIELDS = (
    "beta_err",
    "theta_err",
    "precision_beta",
    "recall_beta",
    "precision_theta",
    "recall_theta",
)


class _Welford:
    """Streaming mean/variance accumulator."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, value: float):
        if np.isnan(value):
            return
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    def stats(self) -> tuple[float, float]:
        if self.count == 0:
            return float("nan"), float("nan")
        if self.count == 1:
            return self.mean, 0.0
        return self.mean, float(np.sqrt(self.m2 / (self.count - 1)))


@dataclass
class SimulationReport:
    """Per-replicate records plus the run description that produced them."""

    example: str
    n: int
    p: int
    rho: float
    reps: int
    master_seed: int
    estimators: tuple
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def aggregate(self) -> dict:
        """Streamed mean and sample sd per (method, criterion, iteration) cell."""
        cells: dict = {}
        for rec in self.records:
            key = (rec.method, rec.criterion, rec.iteration)
            cell = cells.setdefault(key, {m: _Welford() for m in _METRIC_FIELDS})
            for m in _METRIC_FIELDS:
                cell[m].add(getattr(rec, m))
        return {
            key: {m: acc.stats() for m, acc in cell.items()}
            for key, cell in cells.items()
        }

    def iterations(self) -> list:
        return sorted({rec.iteration for rec in self.records})

    def max_trace_jump(self) -> float:
        return max((rec.max_trace_jump for rec in self.records), default=0.0)

    def to_tsv(self) -> str:
        """Mean(sd) table mirroring the benchmark layout, 4-decimal cells."""
        agg = self.aggregate()
        theta_cols = ["theta_l2", "pre_theta", "rec_theta"]
        beta_cols = ["beta_l2", "pre_beta", "rec_beta"]
        theta_metrics = ["theta_err", "precision_theta", "recall_theta"]
        beta_metrics = ["beta_err", "precision_beta", "recall_beta"]
        variance_only = self.example == EXAMPLE1
        header = ["estimator", "criterion", "iteration"]
        header += theta_cols if variance_only else beta_cols + theta_cols
        lines = ["\t".join(header)]

        def cell(pair):
            mean, sd = pair
            return f"{mean:.4f}({sd:.4f})"

        methods = []
        for method, _ in self.estimators:
            if method not in methods:
                methods.append(method)
        crits = []
        for _, crit in self.estimators:
            if crit not in crits:
                crits.append(crit)
        for crit in crits:
            for method in methods:
                if (method, crit) not in self.estimators:
                    continue
                for it in self.iterations():
                    key = (method, crit, it)
                    if key not in agg:
                        continue
                    cols = [method, crit, str(it)]
                    metrics = (
                        theta_metrics if variance_only else beta_metrics + theta_metrics
                    )
                    cols += [cell(agg[key][m]) for m in metrics]
                    lines.append("\t".join(cols))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "example": self.example,
            "n": self.n,
            "p": self.p,
            "rho": self.rho,
            "reps": self.reps,
            "master_seed": self.master_seed,
            "estimators": [list(e) for e in self.estimators],
            "failures": [list(f) for f in self.failures],
            "records": [asdict(rec) for rec in self.records],
            "aggregate": {
                f"{m}-{c}-it{it}": {k: list(v) for k, v in cell.items()}
                for (m, c, it), cell in sorted(self.aggregate().items())
            },
        }
        return json.dumps(payload, indent=2, sort_keys=True, allow_nan=True)


def run_monte_carlo(
    spec: SimulationSpec, cfg: PipelineConfig | None = None, jobs: int = 1,
    grid: GridSpec | None = None,
) -> SimulationReport:
    """Run `spec.reps` independent replicates and collect metric records.

    Each replicate draws its data from its own seed substream and fits
    every requested estimator.  Replicate failures are recorded in
    ``report.failures`` rather than aborting the run.  Results do not
    depend on `jobs`; records are merged in replicate order.
    """
    cfg = cfg if cfg is not None else PipelineConfig()
    grid = grid if grid is not None else GridSpec()
    args = [(spec, cfg, grid, r) for r in range(spec.reps)]
    outcomes = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_replicate_worker, args))
    else:
        outcomes = [_replicate_worker(a) for a in args]
    outcomes.sort(key=lambda t: t[0])
    report = SimulationReport(
        example=spec.example,
        n=spec.n,
        p=spec.p,
        rho=spec.rho,
        reps=spec.reps,
        master_seed=spec.master_seed,
        estimators=tuple(spec.estimators),
    )
    for r, records, err in outcomes:
        if err is not None:
            report.failures.append((r, err))
        report.records.extend(records)
    return report
