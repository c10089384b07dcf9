import numpy as np
import pytest

from hippo.penalty import L1, SCAD, PenaltySpec, soft_threshold
from hippo.solvers import (
    DegenerateResidualsError,
    SolverConfig,
    VarianceProblem,
    WeightedL1Problem,
    kkt_residual,
    lla_solve,
    penalized_objective,
    solve_variance_l1,
    solve_weighted_l1_ls,
)

TIGHT = SolverConfig(
    max_inner_iters=20000, inner_tol=1e-12, kkt_tol=1e-9, param_tol=1e-11
)


def wls_closed_form(x, y, w):
    xw = x * w[:, None]
    return np.linalg.solve(x.T @ xw, xw.T @ y)


class TestWeightedL1LeastSquares:
    def test_huge_penalty_gives_zero(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((30, 5))
        y = rng.standard_normal(30)
        c = np.full(5, 1e6 * np.max(np.abs(x.T @ y)))
        info = solve_weighted_l1_ls(
            WeightedL1Problem(x, y, np.ones(30), c), SolverConfig()
        )
        assert np.all(info.coef == 0.0)
        assert info.converged

    @pytest.mark.parametrize("seed", range(20))
    def test_zero_penalty_matches_closed_form_wls(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((20, 3))
        y = rng.standard_normal(20)
        w = rng.uniform(0.5, 2.0, 20)
        info = solve_weighted_l1_ls(
            WeightedL1Problem(x, y, w, np.zeros(3)), TIGHT
        )
        assert info.converged
        assert np.max(np.abs(info.coef - wls_closed_form(x, y, w))) < 1e-6

    def test_one_dimensional_matches_soft_threshold(self):
        # min (1/n) sum w (y - x b)^2 + 2 c |b| has the closed form
        # S(sum w x y, n c) / sum w x^2
        rng = np.random.default_rng(3)
        x = rng.standard_normal((15, 1))
        y = rng.standard_normal(15)
        w = rng.uniform(0.2, 3.0, 15)
        n = 15
        for c in (0.0, 0.05, 0.3, 2.0):
            info = solve_weighted_l1_ls(
                WeightedL1Problem(x, y, w, np.array([c])), TIGHT
            )
            num = float((w * x[:, 0]) @ y)
            den = float(w @ (x[:, 0] ** 2))
            expected = soft_threshold(num, n * c) / den
            assert info.coef[0] == pytest.approx(expected, abs=1e-8)

    def test_scalar_grid_search_oracle(self):
        x = np.array([[1.0], [1.0]])
        y = np.array([2.0, 2.0])
        prob = WeightedL1Problem(x, y, np.ones(2), np.array([0.5]))
        info = solve_weighted_l1_ls(prob, TIGHT)
        grid = np.arange(-5.0, 5.0, 1e-5)
        objs = np.mean((y[:, None] - grid[None, :]) ** 2, axis=0) + 2 * 0.5 * np.abs(grid)
        assert info.coef[0] == pytest.approx(grid[np.argmin(objs)], abs=1e-4)

    @pytest.mark.parametrize("seed", range(25))
    def test_kkt_residual_small_on_random_instances(self, seed):
        rng = np.random.default_rng(100 + seed)
        x = rng.standard_normal((50, 20))
        beta = np.zeros(20)
        beta[:4] = rng.standard_normal(4) * 2
        y = x @ beta + rng.standard_normal(50)
        w = rng.uniform(0.5, 2.0, 50)
        c = np.full(20, 0.1)
        prob = WeightedL1Problem(x, y, w, c)
        info = solve_weighted_l1_ls(prob, SolverConfig())
        assert kkt_residual(prob, info.coef) <= 1e-4

    def test_observation_order_invariance(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((40, 6))
        y = rng.standard_normal(40)
        w = rng.uniform(0.5, 2.0, 40)
        c = np.full(6, 0.15)
        info = solve_weighted_l1_ls(WeightedL1Problem(x, y, w, c), TIGHT)
        perm = rng.permutation(40)
        info_p = solve_weighted_l1_ls(
            WeightedL1Problem(x[perm], y[perm], w[perm], c), TIGHT
        )
        assert np.max(np.abs(info.coef - info_p.coef)) < 1e-5

    def test_never_worse_than_init(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((30, 10))
        y = rng.standard_normal(30)
        prob = WeightedL1Problem(x, y, np.ones(30), np.full(10, 0.2))
        init = rng.standard_normal(10)
        cfg = SolverConfig(max_inner_iters=3)  # far from convergence
        info = solve_weighted_l1_ls(prob, cfg, init=init)
        r = x @ init - y
        obj_init = float(r @ r) / 30 + float(2 * 0.2 * np.sum(np.abs(init)))
        assert info.objective <= obj_init + 1e-12


class TestVarianceCoordinateDescent:
    def test_intercept_only_analytic_minimum(self):
        x = np.ones((2, 1))
        sq = np.array([1.0, 4.0])
        info = solve_variance_l1(x, sq, np.zeros(1), TIGHT)
        assert info.coef[0] == pytest.approx(np.log(2.5), abs=1e-8)

    def test_stationary_at_zero_for_unit_residuals(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((40, 4))
        x -= x.mean(axis=0)  # first-order condition holds exactly at 0
        sq = np.ones(40)
        info = solve_variance_l1(x, sq, np.zeros(4), TIGHT)
        grad = (x.sum(axis=0) - (sq * np.exp(-x @ info.coef)) @ x) / 40
        assert np.max(np.abs(grad)) < 1e-8
        assert np.max(np.abs(info.coef)) < 1e-6

    def test_all_zero_residuals_degenerate(self):
        with pytest.raises(DegenerateResidualsError):
            solve_variance_l1(np.ones((3, 1)), np.zeros(3), np.zeros(1), SolverConfig())

    @pytest.mark.parametrize("seed", range(10))
    def test_two_dim_grid_oracle(self, seed):
        rng = np.random.default_rng(200 + seed)
        x = rng.standard_normal((30, 2))
        theta_true = np.array([0.8, -0.5])
        sq = np.exp(x @ theta_true) * rng.standard_normal(30) ** 2
        c = np.full(2, 0.1)
        info = solve_variance_l1(x, sq, c, SolverConfig())
        grid = np.arange(-2.0, 2.0 + 1e-9, 1e-3)
        best, arg = np.inf, None
        for t0 in grid:
            z = x[:, 0] * t0
            vals = z[:, None] + x[:, 1][:, None] * grid[None, :]
            obj = (
                vals.sum(axis=0)
                + (sq[:, None] * np.exp(-np.clip(vals, -30, 30))).sum(axis=0)
            ) / 30 + 4 * (c[0] * abs(t0) + c[1] * np.abs(grid))
            j = int(np.argmin(obj))
            if obj[j] < best:
                best, arg = obj[j], (t0, grid[j])
        assert abs(info.coef[0] - arg[0]) < 2e-3
        assert abs(info.coef[1] - arg[1]) < 2e-3

    @pytest.mark.parametrize("seed", range(25))
    def test_kkt_residual_small_on_random_instances(self, seed):
        rng = np.random.default_rng(300 + seed)
        x = rng.standard_normal((50, 20))
        theta = np.zeros(20)
        theta[:3] = [0.8, -0.6, 0.4]
        sq = np.exp(x @ theta) * rng.standard_normal(50) ** 2
        c = np.full(20, 0.05)
        prob = VarianceProblem(x, sq, c)
        info = solve_variance_l1(x, sq, c, SolverConfig())
        assert kkt_residual(prob, info.coef) <= 1e-4

    def test_observation_order_invariance(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((35, 5))
        sq = rng.standard_normal(35) ** 2
        c = np.full(5, 0.08)
        a = solve_variance_l1(x, sq, c, TIGHT)
        perm = rng.permutation(35)
        b = solve_variance_l1(x[perm], sq[perm], c, TIGHT)
        assert np.max(np.abs(a.coef - b.coef)) < 1e-5


class TestLlaSolve:
    def test_l1_spec_is_single_inner_solve(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((25, 6))
        y = rng.standard_normal(25)
        prob = WeightedL1Problem(x, y, np.ones(25))
        spec = PenaltySpec(L1, 0.2)
        res = lla_solve(prob, spec, SolverConfig())
        assert res.n_lla_iter == 1
        direct = solve_weighted_l1_ls(
            WeightedL1Problem(x, y, np.ones(25), np.full(6, 0.2)), SolverConfig()
        )
        assert np.allclose(res.coef, direct.coef)

    def test_zero_design_returns_zero(self):
        prob = WeightedL1Problem(np.zeros((10, 3)), np.ones(10), np.ones(10))
        res = lla_solve(prob, PenaltySpec(SCAD, 0.5), SolverConfig())
        assert np.all(res.coef == 0.0)

    def test_second_pass_unpenalizes_large_coefficients(self):
        # strong signal, all |beta_j| beyond a*lambda after the l1 pass
        rng = np.random.default_rng(7)
        x = rng.standard_normal((100, 4))
        beta = np.array([5.0, -4.0, 6.0, 4.5])
        y = x @ beta + 0.05 * rng.standard_normal(100)
        prob = WeightedL1Problem(x, y, np.ones(100))
        spec = PenaltySpec(SCAD, 0.3)
        res = lla_solve(prob, spec, TIGHT)
        # the SCAD solution should match the unpenalized fit
        ols = wls_closed_form(x, y, np.ones(100))
        assert np.max(np.abs(res.coef - ols)) < 1e-6
        assert len(res.objective_trace) >= 2
        assert res.objective_trace[-1] <= res.objective_trace[0] + 1e-12

    def test_trace_monotone_and_jump_zero(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((60, 30))
        beta = np.zeros(30)
        beta[:3] = [3.0, -2.0, 1.5]
        y = x @ beta + rng.standard_normal(60)
        prob = WeightedL1Problem(x, y, np.ones(60))
        res = lla_solve(prob, PenaltySpec(SCAD, 0.15), SolverConfig())
        tr = res.objective_trace
        for a, b in zip(tr, tr[1:]):
            assert b <= a + 1e-9 * max(1.0, abs(a))
        assert res.max_trace_jump <= 1e-9

    def test_warm_start_at_truth_is_fixed_point(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((50, 5))
        beta = np.array([4.0, 0.0, -3.0, 0.0, 5.0])
        y = x @ beta  # noiseless
        prob = WeightedL1Problem(x, y, np.ones(50))
        spec = PenaltySpec(SCAD, 0.2)
        res = lla_solve(prob, spec, TIGHT, init=beta)
        assert np.max(np.abs(res.coef - beta)) < 1e-7

    def test_variance_problem_dispatch(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((40, 3))
        theta = np.array([1.0, 0.0, -0.7])
        sq = np.exp(x @ theta) * rng.standard_normal(40) ** 2
        prob = VarianceProblem(x, sq)
        res = lla_solve(prob, PenaltySpec(SCAD, 0.05), SolverConfig())
        assert res.coef.shape == (3,)
        assert res.objective_trace == sorted(res.objective_trace, reverse=True)

    def test_penalized_objective_excludes_unpenalized(self):
        x = np.ones((4, 2))
        prob = WeightedL1Problem(x, np.zeros(4), np.ones(4))
        spec = PenaltySpec(L1, 1.0)
        coef = np.array([3.0, 1.0])
        with_pen = penalized_objective(prob, coef, spec)
        without = penalized_objective(prob, coef, spec, unpenalized=(0,))
        assert with_pen - without == pytest.approx(2.0 * 3.0)
