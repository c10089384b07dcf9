import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hippo.model import (
    Dataset,
    ModelParams,
    neg_log_likelihood,
    neg_log_likelihood_terms,
    predict_mean,
    residuals,
    variance_scale,
)


def make_dataset(x, y, mi=False, vi=False):
    return Dataset(np.asarray(x, float), np.asarray(y, float), mi, vi)


class TestDataset:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="rows"):
            make_dataset([[1.0], [2.0]], [1.0])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            make_dataset([[np.nan]], [1.0])
        with pytest.raises(ValueError):
            make_dataset([[1.0]], [np.inf])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((0, 2)), np.zeros(0))

    def test_arrays_immutable(self):
        d = make_dataset([[1.0, 2.0]], [3.0])
        with pytest.raises(ValueError):
            d.x[0, 0] = 5.0

    def test_intercept_designs(self):
        d = make_dataset([[2.0], [3.0]], [0.0, 0.0], mi=True, vi=False)
        assert d.mean_design.shape == (2, 2)
        assert np.all(d.mean_design[:, 0] == 1.0)
        assert d.var_design.shape == (2, 1)
        assert d.n_mean_coefs == 2 and d.n_var_coefs == 1


class TestPredictMean:
    def test_direct_product(self):
        d = make_dataset([[1.0], [2.0]], [0.0, 0.0])
        p = ModelParams([2.0], [0.0])
        assert np.allclose(predict_mean(d, p), [2.0, 4.0])

    def test_zero_coefficients(self):
        d = make_dataset(np.arange(6.0).reshape(3, 2), np.zeros(3))
        p = ModelParams([0.0, 0.0], [0.0, 0.0])
        assert np.all(predict_mean(d, p) == 0.0)

    def test_cancellation(self):
        d = make_dataset([[1.0, 1.0]], [0.0])
        p = ModelParams([1.0, -1.0], [0.0, 0.0])
        assert np.allclose(predict_mean(d, p), [0.0])

    def test_dimension_mismatch(self):
        d = make_dataset([[1.0, 1.0]], [0.0])
        with pytest.raises(ValueError, match="beta"):
            predict_mean(d, ModelParams([1.0], [0.0, 0.0]))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_linear_in_beta(self, seed):
        rng = np.random.default_rng(seed)
        d = make_dataset(rng.standard_normal((5, 3)), rng.standard_normal(5))
        b1, b2 = rng.standard_normal(3), rng.standard_normal(3)
        t = np.zeros(3)
        both = predict_mean(d, ModelParams(b1 + b2, t))
        split = predict_mean(d, ModelParams(b1, t)) + predict_mean(d, ModelParams(b2, t))
        assert np.allclose(both, split)


class TestVarianceScale:
    def test_zero_theta_gives_ones(self):
        d = make_dataset([[1.0, -4.0], [2.0, 0.5]], [0.0, 0.0])
        p = ModelParams([0.0, 0.0], [0.0, 0.0])
        assert np.allclose(variance_scale(d, p), 1.0)

    def test_exponent_is_half_the_predictor(self):
        d = make_dataset([[2.0]], [0.0])
        p = ModelParams([0.0], [1.0])
        assert np.allclose(variance_scale(d, p), np.e)

    def test_clipping_at_30(self):
        d = make_dataset([[100.0]], [0.0])
        p = ModelParams([0.0], [1.0])
        assert np.allclose(variance_scale(d, p), np.exp(15.0))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_strictly_positive(self, seed):
        rng = np.random.default_rng(seed)
        d = make_dataset(10 * rng.standard_normal((6, 2)), rng.standard_normal(6))
        p = ModelParams(np.zeros(2), 10 * rng.standard_normal(2))
        assert np.all(variance_scale(d, p) > 0.0)


class TestResiduals:
    def test_perfect_fit(self):
        d = make_dataset([[1.0], [2.0]], [1.0, 2.0])
        assert np.allclose(residuals(d, ModelParams([1.0], [0.0])), [0.0, 0.0])

    def test_single_row(self):
        d = make_dataset([[1.0]], [3.0])
        assert np.allclose(residuals(d, ModelParams([1.0], [0.0])), [2.0])

    def test_signs(self):
        d = make_dataset([[1.0], [-1.0]], [0.0, 0.0])
        assert np.allclose(residuals(d, ModelParams([1.0], [0.0])), [-1.0, 1.0])


class TestNegLogLikelihood:
    def test_unit_residual_zero_theta(self):
        d = make_dataset([[1.0]], [1.0])
        p = ModelParams([0.0], [0.0])
        assert neg_log_likelihood(d, p) == pytest.approx(1.0)

    def test_zero_residual_zero_theta(self):
        d = make_dataset([[1.0]], [1.0])
        p = ModelParams([1.0], [0.0])
        assert neg_log_likelihood(d, p) == pytest.approx(0.0)

    def test_two_rows_mixed(self):
        # rows with x'theta = (log 2, 0) and residuals (sqrt 2, 1)
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        d = make_dataset(x, [np.sqrt(2.0), 1.0])
        p = ModelParams([0.0, 0.0], [np.log(2.0), 0.0])
        expected = np.log(2.0) + 2.0 * 0.5 + 0.0 + 1.0
        assert neg_log_likelihood(d, p) == pytest.approx(expected, abs=1e-12)

    def test_theta_zero_reduces_to_sum_of_squares(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((20, 4))
        y = rng.standard_normal(20)
        d = make_dataset(x, y)
        beta = rng.standard_normal(4)
        p = ModelParams(beta, np.zeros(4))
        rss = float(np.sum((y - x @ beta) ** 2))
        assert neg_log_likelihood(d, p) == pytest.approx(rss, rel=1e-12)

    def test_terms_sum_to_total(self):
        rng = np.random.default_rng(6)
        d = make_dataset(rng.standard_normal((9, 2)), rng.standard_normal(9))
        p = ModelParams(rng.standard_normal(2), rng.standard_normal(2) / 4)
        assert neg_log_likelihood(d, p) == pytest.approx(
            float(np.sum(neg_log_likelihood_terms(d, p)))
        )

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_midpoint_convexity_in_theta(self, seed):
        rng = np.random.default_rng(seed)
        d = make_dataset(rng.standard_normal((12, 3)), rng.standard_normal(12))
        beta = rng.standard_normal(3)
        t1 = rng.standard_normal(3)
        t2 = rng.standard_normal(3)
        mid = neg_log_likelihood(d, ModelParams(beta, (t1 + t2) / 2))
        avg = 0.5 * (
            neg_log_likelihood(d, ModelParams(beta, t1))
            + neg_log_likelihood(d, ModelParams(beta, t2))
        )
        assert mid <= avg + 1e-9 * max(1.0, abs(avg))


class TestModelParams:
    def test_support_recomputable(self):
        p = ModelParams([0.0, 1.5, 0.0, -2.0], [3.0, 0.0])
        assert p.beta_support().tolist() == [1, 3]
        assert p.theta_support().tolist() == [0]
        assert p.df() == 3

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ModelParams([np.nan], [0.0])
