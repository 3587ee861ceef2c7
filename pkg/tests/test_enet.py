import numpy as np
import pytest

from svemkit import enet
from svemkit.enet import (fit_path, kkt_max_violation, predict_path_point,
                          relaxed_refit, repeated_kfold_cv)
from svemkit.errors import DataError


def _instance(seed, n=40, p=10, weight_spread=True):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    beta = np.concatenate([[1.0], rng.normal(size=p - 1)])
    y = X @ beta + rng.normal(scale=0.5, size=n)
    if weight_spread:
        w = rng.uniform(0.3, 2.0, n)
        w /= w.mean()
    else:
        w = np.ones(n)
    return X, y, w


def _weighted_ols(X, y, w):
    return np.linalg.solve((X.T * w) @ X, (X.T * w) @ y)


class TestGaussianPath:
    def test_lambda_max_is_intercept_only(self):
        X, y, w = _instance(0)
        fit = fit_path(X, y, w, alpha=0.7)
        assert fit.k_lambda[0] == 1
        assert np.all(fit.coef[0, 1:] == 0.0)
        assert fit.coef[0, 0] == pytest.approx((w @ y) / len(y), abs=1e-12)

    def test_small_lambda_matches_weighted_ols(self):
        for seed in range(5):
            X, y, w = _instance(seed)
            fit = fit_path(X, y, w, alpha=0.6, lambda_min_ratio=1e-9)
            ols = _weighted_ols(X, y, w)
            assert np.abs(fit.coef[-1] - ols).max() < 1e-6

    def test_univariate_soft_threshold_closed_form(self):
        # 10-point dataset; closed form: on the standardized scale the lasso
        # coefficient is S(rho, lam) with rho the weighted x~y covariance,
        # equivalently S(cov_w, lam * s) / var_w on the original scale.
        rng = np.random.default_rng(3)
        n = 10
        x = rng.normal(size=n)
        y = 2.0 * x + rng.normal(size=n)
        w = np.ones(n)
        X = np.column_stack([np.ones(n), x])
        fit = fit_path(X, y, w, alpha=1.0)
        xm, ym = x.mean(), y.mean()
        var = np.mean((x - xm) ** 2)
        s = np.sqrt(var)
        cov = np.mean((x - xm) * (y - ym))

        def soft(z, t):
            return np.sign(z) * max(abs(z) - t, 0.0)

        for i in [0, 10, 40, 70, 99]:
            lam = fit.lambda_sequence[i]
            expected = soft(cov, lam * s) / var
            assert fit.coef[i, 1] == pytest.approx(expected, abs=1e-8)

    def test_kkt_along_path(self):
        for seed in range(3):
            X, y, w = _instance(seed, n=30, p=12)
            for alpha in (0.5, 1.0):
                fit = fit_path(X, y, w, alpha=alpha)
                assert kkt_max_violation(fit, X, y, w) <= 1e-6

    def test_scaling_equivariance(self):
        X, y, w = _instance(7)
        fit1 = fit_path(X, y, w, alpha=0.8)
        X2 = X.copy()
        X2[:, 3] *= 50.0
        fit2 = fit_path(X2, y, w, alpha=0.8)
        assert np.abs(fit2.coef[:, 3] - fit1.coef[:, 3] / 50.0).max() < 1e-10
        pred1 = X @ fit1.coef[60]
        pred2 = X2 @ fit2.coef[60]
        assert np.abs(pred1 - pred2).max() < 1e-8

    def test_lambda_sequence_strictly_decreasing(self):
        X, y, w = _instance(1)
        fit = fit_path(X, y, w)
        assert np.all(np.diff(fit.lambda_sequence) < 0)

    def test_degenerate_column_gets_zero(self):
        X, y, w = _instance(2)
        X[:, 4] = 3.14  # constant, zero weighted variance
        fit = fit_path(X, y, w, alpha=1.0)
        assert np.all(fit.coef[:, 4] == 0.0)

    def test_default_lambda_min_ratio_rule(self):
        X, y, w = _instance(3, n=40, p=10)
        fit = fit_path(X, y, w)
        ratio = fit.lambda_sequence[-1] / fit.lambda_sequence[0]
        assert ratio == pytest.approx(1e-4, rel=1e-6)
        Xs, ys, ws = _instance(4, n=9, p=10)
        fit_small = fit_path(Xs, ys, ws)
        ratio = fit_small.lambda_sequence[-1] / fit_small.lambda_sequence[0]
        assert ratio == pytest.approx(1e-2, rel=1e-6)


class TestValidation:
    def test_non_finite_rejected(self):
        X, y, w = _instance(0)
        y2 = y.copy()
        y2[0] = np.nan
        with pytest.raises(DataError):
            fit_path(X, y2, w)

    def test_all_zero_weights_rejected(self):
        X, y, w = _instance(0)
        with pytest.raises(DataError):
            fit_path(X, y, np.zeros_like(w))

    def test_non_mean_one_weights_rejected(self):
        X, y, w = _instance(0)
        with pytest.raises(DataError):
            fit_path(X, y, w * 2.0)

    def test_binomial_label_check(self):
        X, y, w = _instance(0)
        with pytest.raises(DataError):
            fit_path(X, y, w, family="binomial")


class TestRelaxedRefit:
    def test_gamma_one_is_penalized_point(self):
        X, y, w = _instance(5)
        fit = fit_path(X, y, w, alpha=1.0)
        rf = relaxed_refit(fit, X, y, w, gamma_grid=(0.0, 0.5, 1.0))
        assert np.allclose(rf.coef[2::3], fit.coef)
        assert np.all(rf.gammas[2::3] == 1.0)
        assert np.all(rf.k_lambda[0::3] == fit.k_lambda)

    def test_gamma_zero_is_active_set_ols(self):
        X, y, w = _instance(6, n=20, p=6)
        fit = fit_path(X, y, w, alpha=1.0)
        rf = relaxed_refit(fit, X, y, w, gamma_grid=(0.0, 1.0))
        i = 55
        active = np.flatnonzero(fit.coef[i, 1:]) + 1
        assert len(active) == 2 or len(active) > 0
        cols = [0] + list(active)
        ols = _weighted_ols(X[:, cols], y, w)
        refit = rf.coef[2 * i]
        assert np.abs(refit[cols] - ols).max() < 1e-8
        off = np.setdiff1d(np.arange(X.shape[1]), cols)
        assert np.all(refit[off] == 0.0)

    def test_empty_active_set_refits_to_weighted_mean(self):
        X, y, w = _instance(8)
        fit = fit_path(X, y, w, alpha=1.0)
        rf = relaxed_refit(fit, X, y, w, gamma_grid=(0.0, 0.25, 1.0))
        # Path head is intercept-only; at every gamma the point is unchanged.
        for j in range(3):
            assert np.allclose(rf.coef[j], fit.coef[0])

    def test_singular_refit_falls_back_flagged(self):
        X, y, w = _instance(9, n=25, p=5)
        X = np.column_stack([X, X[:, 2]])  # duplicated column
        fit = fit_path(X, y, w, alpha=0.5, lambda_min_ratio=1e-6)
        rf = relaxed_refit(fit, X, y, w, gamma_grid=(0.0, 1.0))
        both_active = (fit.coef[:, 2] != 0) & (fit.coef[:, 5] != 0)
        assert both_active.any()
        flagged = rf.degenerate_refit[0::2][both_active]
        assert flagged.all()
        i = int(np.flatnonzero(both_active)[0])
        assert np.allclose(rf.coef[2 * i], fit.coef[i])

    def test_interpolation_midpoint(self):
        X, y, w = _instance(10)
        fit = fit_path(X, y, w, alpha=1.0)
        rf = relaxed_refit(fit, X, y, w, gamma_grid=(0.0, 0.5, 1.0))
        i = 50
        mid = rf.coef[3 * i + 1]
        assert np.allclose(mid, 0.5 * rf.coef[3 * i] + 0.5 * fit.coef[i])


class TestPredict:
    def test_intercept_only_prediction_constant(self):
        X, y, w = _instance(11)
        fit = fit_path(X, y, w)
        point = fit.point(0)
        pred = predict_path_point(point, X)
        assert np.allclose(pred, point.coefficients[0])

    def test_binomial_zero_eta_is_half(self):
        point = enet.PathPoint(1.0, 0.1, 1.0, np.zeros(4), True, 1)
        X = np.column_stack([np.ones(3), np.eye(3)])
        pred = predict_path_point(point, X, scale="response")
        assert np.allclose(pred, 0.5)

    def test_ols_fitted_values_at_small_lambda(self):
        X, y, w = _instance(12)
        fit = fit_path(X, y, w, lambda_min_ratio=1e-9)
        pred = predict_path_point(fit.point(fit.n_points - 1), X)
        ols = X @ _weighted_ols(X, y, w)
        assert np.abs(pred - ols).max() < 1e-5

    def test_column_mismatch_rejected(self):
        X, y, w = _instance(13)
        fit = fit_path(X, y, w)
        with pytest.raises(DataError):
            predict_path_point(fit.point(0), X[:, :3])


class TestBinomialPath:
    def _binomial_instance(self, seed, n=60, p=6):
        rng = np.random.default_rng(seed)
        X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
        beta = np.concatenate([[0.2], rng.normal(scale=1.2, size=p - 1)])
        prob = 1.0 / (1.0 + np.exp(-(X @ beta)))
        y = (rng.random(n) < prob).astype(float)
        w = np.ones(n)
        return X, y, w, beta

    def test_path_head_intercept_only(self):
        X, y, w, _ = self._binomial_instance(0)
        fit = fit_path(X, y, w, family="binomial", alpha=1.0)
        assert fit.k_lambda[0] == 1
        pbar = y.mean()
        assert fit.coef[0, 0] == pytest.approx(np.log(pbar / (1 - pbar)), abs=1e-6)

    def test_small_lambda_approaches_unpenalized_mle(self):
        X, y, w, _ = self._binomial_instance(1, n=200)
        fit = fit_path(X, y, w, family="binomial", alpha=1.0,
                       lambda_min_ratio=1e-7)
        # Unpenalized IRLS oracle
        b = np.zeros(X.shape[1])
        for _ in range(60):
            eta = X @ b
            prob = np.clip(1 / (1 + np.exp(-eta)), 1e-9, 1 - 1e-9)
            wt = prob * (1 - prob)
            z = eta + (y - prob) / wt
            b = np.linalg.solve((X.T * wt) @ X, (X.T * wt) @ z)
        assert np.abs(fit.coef[-1] - b).max() < 5e-3

    def test_probabilities_stay_interior(self):
        X, y, w, _ = self._binomial_instance(2, n=30)
        fit = fit_path(X, y, w, family="binomial", alpha=0.5)
        eta = X @ fit.coef.T
        prob = 1 / (1 + np.exp(-eta))
        assert np.all(prob > 0) and np.all(prob < 1)


class TestRepeatedKfoldCv:
    def test_noiseless_linear_recovery(self):
        rng = np.random.default_rng(21)
        n = 40
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 6))])
        y = 3.0 * X[:, 1]
        point = repeated_kfold_cv(X, y, rng_seed=5)
        assert point.coefficients[1] != 0.0
        holdout = np.column_stack([np.ones(50), rng.normal(size=(50, 6))])
        pred = predict_path_point(point, holdout)
        rmse = np.sqrt(np.mean((pred - 3.0 * holdout[:, 1]) ** 2))
        assert rmse < 1e-3

    def test_pure_noise_selects_sparse(self, order2_spec, sim_factors_data):
        # Monte Carlo property: on pure noise the repeated-CV selector stays
        # near intercept-only in the large majority of runs.  Frozen from the
        # seeded oracle run (76/100 at the default repeats=3); spurious
        # minima on a 200-point candidate grid keep it below a perfect rate.
        from svemkit.expand import expand_rows
        X = expand_rows(order2_spec, sim_factors_data).values
        hits = 0
        runs = 100
        for seed in range(runs):
            y = np.random.default_rng(10_000 + seed).normal(size=X.shape[0])
            point = repeated_kfold_cv(X, y, k=5, repeats=3, rng_seed=seed)
            if point.k_lambda <= 3:
                hits += 1
        assert hits >= 0.7 * runs

    def test_identical_folds_match_single_repeat(self):
        rng = np.random.default_rng(30)
        n = 30
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 5))])
        y = X[:, 1] + rng.normal(scale=0.4, size=n)
        ids = np.arange(n) % 5
        one = repeated_kfold_cv(X, y, k=5, folds=[ids])
        two = repeated_kfold_cv(X, y, k=5, folds=[ids, ids])
        assert one.alpha == two.alpha
        assert one.lam == two.lam
        assert np.array_equal(one.coefficients, two.coefficients)

    def test_binomial_single_class_fold_errors(self):
        rng = np.random.default_rng(31)
        n = 20
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 3))])
        y = np.zeros(n)
        y[0] = 1.0  # the fold holding row 0 trains single-class
        with pytest.raises(DataError):
            repeated_kfold_cv(X, y, family="binomial", k=5, repeats=1,
                              rng_seed=0)

    def test_n_too_small_rejected(self):
        X = np.column_stack([np.ones(8), np.arange(8.0)])
        with pytest.raises(DataError):
            repeated_kfold_cv(X, np.arange(8.0), k=5)
