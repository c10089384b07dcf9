"""Inner convex solvers and the majorization loop that upgrades them to SCAD.

Two problems appear in the pipeline, both with per-coordinate l1 weights:

* weighted least squares  (1/n) sum_i w_i (y_i - x_i'b)^2 + 2 sum_j c_j |b_j|,
  solved by accelerated proximal gradient (FISTA) with backtracking;
* the variance pseudolikelihood
  (1/n) sum_i [x_i't + e_i^2 exp(-x_i't)] + 4 sum_j c_j |t_j|,
  solved by cyclic coordinate descent with damped 1-D Newton steps.

Objectives are normalized by 1/n (the argmin is unchanged), which makes the
tolerances scale-free in n; the penalty multipliers 2 and 4 mirror the 2n
and 4n factors of the unnormalized objectives.

`lla_solve` wraps either solver in the local linear approximation loop: each
pass majorizes the concave penalty at the current iterate by a weighted l1
penalty and re-solves, warm-starting from the previous solution.  Because
the inner solvers never return a point worse than their starting point, the
penalized objective trace across passes is non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import LINEAR_PREDICTOR_CLIP
from .penalty import L1, PenaltySpec, lla_weights, penalty_value, soft_threshold


class DegenerateResidualsError(RuntimeError):
    """All squared residuals are zero: the variance objective is unbounded."""


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and iteration caps shared by both inner solvers.

    ``inner_tol`` is a relative objective-change tolerance.  Convergence
    additionally requires the KKT residual to fall below ``kkt_tol`` (times
    a problem-scale factor) and, for coordinate descent, the largest
    coordinate move in a full verification sweep to fall below
    ``param_tol``; objective flatness alone leaves the solution far less
    accurate than the stated oracle tolerances.  For FISTA
    ``max_inner_iters`` counts gradient steps, for coordinate descent full
    or active-set sweeps.
    """

    max_inner_iters: int = 2000
    inner_tol: float = 1e-7
    max_lla_iters: int = 10
    lla_tol: float = 1e-6
    backtrack_factor: float = 0.5
    kkt_tol: float = 1e-6
    param_tol: float = 1e-7

    def __post_init__(self):
        if min(self.max_inner_iters, self.max_lla_iters) < 1:
            raise ValueError("iteration caps must be >= 1")
        if min(self.inner_tol, self.lla_tol, self.kkt_tol, self.param_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must lie in (0, 1)")


def _check_weights(w, length: int, name: str) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (length,):
        raise ValueError(f"{name} has shape {w.shape}, expected ({length},)")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError(f"{name} must be finite and >= 0")
    return w


@dataclass(frozen=True)
class WeightedL1Problem:
    """Weighted least squares with per-coordinate l1 weights.

    ``obs_weights`` are 1/sigma_i in the reweighted stage and all ones in
    the plain stage; ``coef_weights`` are the per-coordinate lambda weights
    (None when a surrounding LLA loop will supply them).
    """

    x: np.ndarray
    y: np.ndarray
    obs_weights: np.ndarray
    coef_weights: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError("x must be (n, p) and y (n,) with matching n")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(
            self, "obs_weights", _check_weights(self.obs_weights, x.shape[0], "obs_weights")
        )
        if self.coef_weights is not None:
            object.__setattr__(
                self,
                "coef_weights",
                _check_weights(self.coef_weights, x.shape[1], "coef_weights"),
            )


@dataclass(frozen=True)
class VarianceProblem:
    """Variance pseudolikelihood data: design, squared residuals, weights."""

    x: np.ndarray
    sq_residuals: np.ndarray
    coef_weights: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        sq = np.asarray(self.sq_residuals, dtype=float)
        if x.ndim != 2 or sq.ndim != 1 or x.shape[0] != sq.shape[0]:
            raise ValueError("x must be (n, p) and sq_residuals (n,) with matching n")
        if np.any(sq < 0):
            raise ValueError("sq_residuals must be >= 0")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "sq_residuals", sq)
        if self.coef_weights is not None:
            object.__setattr__(
                self,
                "coef_weights",
                _check_weights(self.coef_weights, x.shape[1], "coef_weights"),
            )


@dataclass
class SolveInfo:
    """Inner-solver output: best iterate found plus convergence bookkeeping."""

    coef: np.ndarray
    objective: float
    n_iter: int
    converged: bool


def _clip(z: np.ndarray) -> np.ndarray:
    return np.clip(z, -LINEAR_PREDICTOR_CLIP, LINEAR_PREDICTOR_CLIP)


# ---------------------------------------------------------------------------
# weighted l1 least squares (FISTA)
# ---------------------------------------------------------------------------


def _ls_smooth(prob: WeightedL1Problem, beta: np.ndarray) -> float:
    r = prob.x @ beta - prob.y
    return float(prob.obs_weights @ (r * r)) / prob.x.shape[0]


def _ls_grad(prob: WeightedL1Problem, beta: np.ndarray) -> np.ndarray:
    r = prob.x @ beta - prob.y
    return (2.0 / prob.x.shape[0]) * (prob.x.T @ (prob.obs_weights * r))


def _l1_kkt(grad: np.ndarray, coef: np.ndarray, thresholds: np.ndarray) -> float:
    """Max violation of the subgradient conditions for min f + sum t_j |b_j|."""
    on = coef != 0.0
    viol_on = np.abs(grad[on] + thresholds[on] * np.sign(coef[on]))
    viol_off = np.maximum(np.abs(grad[~on]) - thresholds[~on], 0.0)
    worst = 0.0
    if viol_on.size:
        worst = max(worst, float(viol_on.max()))
    if viol_off.size:
        worst = max(worst, float(viol_off.max()))
    return worst


def _fista(x, y, w, thresholds, init, cfg: SolverConfig, scale: float):
    """FISTA with backtracking and restart on one (possibly restricted) problem.

    Returns the best iterate seen (the starting point included), so the
    objective never exceeds the one at `init`.
    """
    n = x.shape[0]

    def smooth(b):
        r = x @ b - y
        return float(w @ (r * r)) / n

    def grad(b):
        r = x @ b - y
        return (2.0 / n) * (x.T @ (w * r))

    lip = max(_power_iteration(x, w), 1e-12)

    def prox_from(point, f_point, g_point):
        nonlocal lip
        while True:
            cand = soft_threshold(point - g_point / lip, thresholds / lip)
            diff = cand - point
            f_cand = smooth(cand)
            bound = f_point + float(g_point @ diff) + 0.5 * lip * float(diff @ diff)
            if f_cand <= bound + 1e-12 * max(1.0, abs(f_point)):
                return cand, f_cand
            lip /= cfg.backtrack_factor

    prev = init
    obj_prev = smooth(prev) + float(thresholds @ np.abs(prev))
    best, best_obj = prev.copy(), obj_prev
    mom = prev
    t_mom = 1.0
    converged = False
    it = 0
    flat_streak = 0

    while it < cfg.max_inner_iters:
        it += 1
        cand, f_cand = prox_from(mom, smooth(mom), grad(mom))
        obj_cand = f_cand + float(thresholds @ np.abs(cand))
        if obj_cand > obj_prev + 1e-12 * max(1.0, abs(obj_prev)):
            # momentum overshot: restart from the last accepted iterate
            mom, t_mom = prev, 1.0
            cand, f_cand = prox_from(mom, smooth(mom), grad(mom))
            obj_cand = f_cand + float(thresholds @ np.abs(cand))

        if obj_cand < best_obj:
            best, best_obj = cand.copy(), obj_cand

        if abs(obj_cand - obj_prev) <= cfg.inner_tol * max(1.0, abs(obj_prev)):
            flat_streak += 1
            if flat_streak >= 2 or it >= cfg.max_inner_iters:
                kkt = _l1_kkt(grad(cand), cand, thresholds)
                if kkt <= cfg.kkt_tol * scale:
                    converged = True
                    break
                flat_streak = 0
        else:
            flat_streak = 0

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
        mom = cand + ((t_mom - 1.0) / t_next) * (cand - prev)
        prev = cand
        t_mom = t_next
        obj_prev = obj_cand

    return best, best_obj, it, converged


def _power_iteration(x, w, n_iter: int = 50) -> float:
    """Largest eigenvalue of (2/n) X'WX (deterministic start)."""
    n, p = x.shape
    v = np.ones(p) / np.sqrt(p)
    lam = 0.0
    for _ in range(n_iter):
        mv = (2.0 / n) * (x.T @ (w * (x @ v)))
        norm = np.linalg.norm(mv)
        if norm == 0.0:
            return 0.0
        v = mv / norm
        lam = norm
    return lam


def solve_weighted_l1_ls(
    prob: WeightedL1Problem, cfg: SolverConfig, init: np.ndarray | None = None
) -> SolveInfo:
    """Minimize (1/n) sum w_i (y_i - x_i'b)^2 + 2 sum c_j |b_j|.

    Accelerated proximal gradient (FISTA) with a backtracked step size, run
    on a growing working set: the restricted problem over the currently
    nonzero and unpenalized coordinates is solved, the full KKT conditions
    are checked with one full gradient, and any violating coordinates join
    the set.  Restricted solves start at the incumbent, so the objective
    never exceeds the one at `init`.  On hitting ``max_inner_iters`` the
    best iterate is returned with ``converged=False``; callers tolerate
    that.
    """
    if prob.coef_weights is None:
        raise ValueError("coef_weights must be set before solving")
    x, y, w, c = prob.x, prob.y, prob.obs_weights, prob.coef_weights
    n, p = x.shape
    thresholds = 2.0 * c

    beta = np.zeros(p) if init is None else np.asarray(init, dtype=float).copy()
    if beta.shape != (p,):
        raise ValueError(f"init has shape {beta.shape}, expected ({p},)")

    grad0 = (2.0 / n) * (x.T @ (w * y))
    scale = max(1.0, float(np.max(thresholds, initial=0.0)), float(np.max(np.abs(grad0))))
    kkt_stop = cfg.kkt_tol * scale

    if p <= 64:
        coef, obj, iters, converged = _fista(x, y, w, thresholds, beta, cfg, scale)
        return SolveInfo(coef=coef, objective=obj, n_iter=iters, converged=converged)

    active = (beta != 0.0) | (thresholds == 0.0)
    total_iters = 0
    converged = False
    for _ in range(40):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            # nothing active yet: screen against the gradient at zero
            viol = np.abs(grad0) > thresholds
            if not np.any(viol):
                obj = _ls_smooth(prob, beta)
                return SolveInfo(coef=beta, objective=obj, n_iter=0, converged=True)
            active |= viol
            continue
        sub, obj, iters, sub_conv = _fista(
            x[:, idx], y, w, thresholds[idx], beta[idx], cfg, scale
        )
        beta = np.zeros(p)
        beta[idx] = sub
        total_iters += iters
        grad = _ls_grad(prob, beta)
        viol = (~active) & (np.abs(grad) > thresholds + 0.5 * kkt_stop)
        if not np.any(viol):
            converged = sub_conv and _l1_kkt(grad, beta, thresholds) <= kkt_stop
            break
        active |= viol
        active |= beta != 0.0
        if total_iters >= cfg.max_inner_iters:
            break

    obj = _ls_smooth(prob, beta) + float(thresholds @ np.abs(beta))
    return SolveInfo(coef=beta, objective=obj, n_iter=total_iters, converged=converged)


# ---------------------------------------------------------------------------
# variance pseudolikelihood (coordinate descent)
# ---------------------------------------------------------------------------


def _var_smooth(x: np.ndarray, sq: np.ndarray, theta: np.ndarray) -> float:
    zc = _clip(x @ theta)
    return float(np.sum(zc) + sq @ np.exp(-zc)) / x.shape[0]


def _var_grad(x: np.ndarray, sq: np.ndarray, theta: np.ndarray) -> np.ndarray:
    u = sq * np.exp(-_clip(x @ theta))
    return (x.sum(axis=0) - u @ x) / x.shape[0]


def solve_variance_l1(
    x: np.ndarray,
    sq_residuals: np.ndarray,
    coef_weights: np.ndarray,
    cfg: SolverConfig,
    init: np.ndarray | None = None,
) -> SolveInfo:
    """Minimize (1/n) sum_i [x_i't + e_i^2 exp(-x_i't)] + 4 sum_j c_j |t_j|.

    Cyclic coordinate descent.  Each coordinate takes a Newton step on the
    smooth part soft-thresholded against the penalty, halved until the
    coordinate objective does not increase (the smooth part is convex, so a
    small enough step always descends).  The first two sweeps visit every
    coordinate; afterwards only the active set (nonzero or unpenalized
    coordinates) is visited, with a full verification sweep plus a KKT check
    before convergence is declared.
    """
    prob = VarianceProblem(x, sq_residuals, coef_weights)
    x, sq = prob.x, prob.sq_residuals
    n, p = x.shape
    if not np.any(sq > 0):
        raise DegenerateResidualsError(
            "degenerate residuals: all squared residuals are zero"
        )
    pen = 4.0 * prob.coef_weights

    theta = np.zeros(p) if init is None else np.asarray(init, dtype=float).copy()
    if theta.shape != (p,):
        raise ValueError(f"init has shape {theta.shape}, expected ({p},)")

    x2 = x * x
    colsum = x.sum(axis=0)
    z = x @ theta
    zc = _clip(z)
    u = sq * np.exp(-zc)
    zc_sum = float(zc.sum())
    u_sum = float(u.sum())
    obj = (zc_sum + u_sum) / n + float(pen @ np.abs(theta))
    scale = max(
        1.0,
        float(np.max(pen, initial=0.0)),
        float(np.max(np.abs((colsum - u @ x) / n))),
    )

    def kkt_ok() -> bool:
        grad = (colsum - u @ x) / n
        return _l1_kkt(grad, theta, pen) <= cfg.kkt_tol * scale

    mode_full = True
    full_done = 0
    sweeps = 0
    converged = False

    while sweeps < cfg.max_inner_iters:
        sweeps += 1
        if mode_full:
            order = range(p)
        else:
            order = np.flatnonzero((theta != 0.0) | (pen == 0.0))
        max_move = 0.0
        for j in order:
            xj = x[:, j]
            g = (colsum[j] - float(xj @ u)) / n
            h = float(x2[:, j] @ u) / n
            if h <= 1e-12:
                continue
            tj = theta[j]
            target = soft_threshold(tj * h - g, pen[j]) / h
            delta = float(target - tj)
            if delta == 0.0:
                continue
            accepted = False
            for _ in range(50):
                z_new = z + delta * xj
                zc_new = _clip(z_new)
                u_new = sq * np.exp(-zc_new)
                zc_new_sum = float(zc_new.sum())
                u_new_sum = float(u_new.sum())
                d_obj = (zc_new_sum - zc_sum + u_new_sum - u_sum) / n + pen[j] * (
                    abs(tj + delta) - abs(tj)
                )
                if d_obj <= 1e-12 * max(1.0, abs(obj)):
                    accepted = True
                    break
                delta *= cfg.backtrack_factor
            if not accepted:
                continue
            theta[j] = tj + delta
            z = z_new
            zc = zc_new
            u = u_new
            zc_sum = zc_new_sum
            u_sum = u_new_sum
            obj += d_obj
            max_move = max(max_move, abs(delta))

        obj_new = (zc_sum + u_sum) / n + float(pen @ np.abs(theta))
        flat = abs(obj_new - obj) <= cfg.inner_tol * max(1.0, abs(obj))
        obj = obj_new
        if mode_full:
            full_done += 1
            if max_move <= cfg.param_tol and flat and kkt_ok():
                converged = True
                break
            if full_done >= 2:
                mode_full = False
        elif max_move <= cfg.param_tol:
            mode_full = True  # verification sweep next

    return SolveInfo(coef=theta, objective=obj, n_iter=sweeps, converged=converged)


# ---------------------------------------------------------------------------
# shared entry points
# ---------------------------------------------------------------------------

Problem = WeightedL1Problem | VarianceProblem


def smooth_objective(problem: Problem, coef: np.ndarray) -> float:
    """The (1/n)-normalized smooth part of either problem's objective."""
    if isinstance(problem, WeightedL1Problem):
        return _ls_smooth(problem, coef)
    return _var_smooth(problem.x, problem.sq_residuals, coef)


def penalty_multiplier(problem: Problem) -> float:
    """2 for the mean problems, 4 for the variance problem."""
    return 2.0 if isinstance(problem, WeightedL1Problem) else 4.0


def penalized_objective(
    problem: Problem, coef: np.ndarray, spec: PenaltySpec, unpenalized=()
) -> float:
    """Smooth part plus the actual (SCAD or l1) penalty over penalized coords."""
    mask = np.ones(coef.shape[0], dtype=bool)
    for j in unpenalized:
        mask[j] = False
    pen = penalty_value(spec, np.abs(coef[mask]))
    return smooth_objective(problem, coef) + penalty_multiplier(problem) * float(
        np.sum(pen)
    )


def kkt_residual(problem: Problem, coef: np.ndarray) -> float:
    """Max KKT violation of the weighted-l1 problem at `coef`."""
    if problem.coef_weights is None:
        raise ValueError("coef_weights must be set")
    if isinstance(problem, WeightedL1Problem):
        grad = _ls_grad(problem, coef)
    else:
        grad = _var_grad(problem.x, problem.sq_residuals, coef)
    return _l1_kkt(grad, coef, penalty_multiplier(problem) * problem.coef_weights)


def _solve_inner(problem: Problem, cfg: SolverConfig, init) -> SolveInfo:
    if isinstance(problem, WeightedL1Problem):
        return solve_weighted_l1_ls(problem, cfg, init)
    return solve_variance_l1(
        problem.x, problem.sq_residuals, problem.coef_weights, cfg, init
    )


@dataclass
class LlaResult:
    """Output of the majorization loop.

    ``objective_trace`` holds the penalized objective at each outer iterate;
    ``max_trace_jump`` is the largest relative increase between consecutive
    entries (0 for a monotone trace).
    """

    coef: np.ndarray
    objective_trace: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    n_lla_iter: int = 0
    converged: bool = True
    max_trace_jump: float = 0.0


def lla_solve(
    problem: Problem,
    spec: PenaltySpec,
    cfg: SolverConfig,
    init: np.ndarray | None = None,
    warm: np.ndarray | None = None,
    unpenalized=(),
) -> LlaResult:
    """Solve a SCAD- or l1-penalized problem by iterated weighted-l1 solves.

    The penalty is linearized at `init` (zeros by default, so the first
    pass is exactly the l1-penalized problem); each pass sets the
    coordinate weights to the penalty derivative at the current solution
    and re-solves, until the max-norm parameter change drops below
    ``cfg.lla_tol`` or ``cfg.max_lla_iters`` passes have run.  An l1 spec
    performs exactly one inner solve.  Indices in `unpenalized` keep
    weight 0 throughout.

    `warm` only seeds the first convex inner solve (e.g. with the previous
    solution along a lambda path); since that problem is convex, the warm
    start affects speed, not the solution path.
    """
    p = problem.x.shape[1]
    cur = np.zeros(p) if init is None else np.asarray(init, dtype=float).copy()
    trace: list[float] = []
    inner_iters: list[int] = []
    converged = True
    max_passes = 1 if spec.family == L1 else cfg.max_lla_iters
    start = cur if warm is None else np.asarray(warm, dtype=float)

    for _ in range(max_passes):
        weights = lla_weights(spec, cur, unpenalized)
        sub = replace(problem, coef_weights=weights)
        info = _solve_inner(sub, cfg, start)
        start = info.coef
        trace.append(penalized_objective(problem, info.coef, spec, unpenalized))
        inner_iters.append(info.n_iter)
        converged = converged and info.converged
        move = float(np.max(np.abs(info.coef - cur), initial=0.0))
        cur = info.coef
        if move < cfg.lla_tol:
            break
        # majorization stalls can flip weights without progress: stop once
        # the penalized objective is flat between passes
        if len(trace) >= 2 and trace[-2] - trace[-1] <= cfg.inner_tol * max(
            1.0, abs(trace[-2])
        ):
            break

    jump = 0.0
    for a, b in zip(trace, trace[1:]):
        jump = max(jump, (b - a) / max(1.0, abs(a)))
    return LlaResult(
        coef=cur,
        objective_trace=trace,
        inner_iterations=inner_iters,
        n_lla_iter=len(trace),
        converged=converged,
        max_trace_jump=max(jump, 0.0),
    )
