import numpy as np
import pytest

from svemkit.errors import ConfigError, DataError
from svemkit.expand import Dataset
from svemkit.svem import (CriterionConfig, SvemModel, criterion_binomial,
                          criterion_gaussian, draw_frw, fit_svem, kish_neff,
                          load_model, member_predictions, model_from_dict,
                          model_to_dict, predict_svem, replicate_rng,
                          save_model)


class TestFrw:
    def test_symmetric_point_gives_unit_weights(self):
        class HalfRng:
            def random(self, n):
                return np.full(n, 0.5)

        pair = draw_frw(4, HalfRng())
        assert np.allclose(pair.w_train, 1.0)
        assert np.allclose(pair.w_valid, 1.0)

    def test_two_point_hand_values(self):
        # Oracle: raw w = (-log u, -log(1-u)) rescaled to mean one.
        class FixedRng:
            def random(self, n):
                return np.array([0.1, 0.9])

        pair = draw_frw(2, FixedRng())
        raw_train = np.array([-np.log(0.1), -np.log(0.9)])
        assert raw_train == pytest.approx([2.302585, 0.105361], abs=1e-6)
        expect_train = raw_train / raw_train.mean()
        assert pair.w_train == pytest.approx(expect_train, abs=1e-12)
        assert pair.w_valid == pytest.approx(expect_train[::-1], abs=1e-12)
        assert pair.w_train.mean() == pytest.approx(1.0, abs=1e-15)

    def test_anticorrelation_monte_carlo(self):
        neg = 0
        draws = 1000
        for i in range(draws):
            pair = draw_frw(30, replicate_rng(42, i))
            if np.corrcoef(pair.w_train, pair.w_valid)[0, 1] < 0:
                neg += 1
        assert neg >= 0.99 * draws

    def test_n_below_two_rejected(self):
        with pytest.raises(DataError):
            draw_frw(1, np.random.default_rng(0))


class TestKishNeff:
    def test_equal_weights(self):
        eff = kish_neff(np.ones(4))
        assert eff.n_eff == pytest.approx(4.0)
        assert eff.n_eff_adm == pytest.approx(4.0)

    def test_lower_clamp(self):
        eff = kish_neff(np.array([1.5, 0.5]))
        assert eff.n_eff == pytest.approx(1.6)
        assert eff.n_eff_adm == pytest.approx(2.0)

    def test_upper_clamp(self):
        for seed in range(5):
            w = draw_frw(10, replicate_rng(7, seed)).w_valid
            assert kish_neff(w).n_eff_adm <= 10.0


class TestCriteria:
    def test_unit_weights_reduce_to_aic(self):
        rng = np.random.default_rng(0)
        for k in (1, 3, 6):
            resid = rng.normal(size=20)
            score = criterion_gaussian(resid, np.ones(20), k,
                                       CriterionConfig("wAIC"))
            rss = float(np.sum(resid ** 2))
            assert score == pytest.approx(20 * np.log(rss / 20) + 2 * k)

    def test_unit_weights_wbic_uses_log_n(self):
        rng = np.random.default_rng(1)
        resid = rng.normal(size=25)
        score = criterion_gaussian(resid, np.ones(25), 4, CriterionConfig("wBIC"))
        rss = float(np.sum(resid ** 2))
        assert score == pytest.approx(25 * np.log(rss / 25) + np.log(25) * 4)

    def test_wsse_is_weighted_sse(self):
        rng = np.random.default_rng(2)
        resid = rng.normal(size=10)
        w = draw_frw(10, replicate_rng(3, 0)).w_valid
        score = criterion_gaussian(resid, w, 5, CriterionConfig("wSSE"))
        assert score == pytest.approx(float(np.sum(w * resid ** 2)))

    def test_guardrail_inadmissible(self):
        resid = np.zeros(10)
        assert criterion_gaussian(resid, np.ones(10), 11,
                                  CriterionConfig("wAIC")) == np.inf
        assert criterion_binomial(np.ones(4), np.full(4, 0.9), np.ones(4), 5,
                                  CriterionConfig("wBIC")) == np.inf

    def test_binomial_perfect_fit_scores_penalty_only(self):
        y = np.array([1.0, 0.0, 1.0])
        p = np.array([1.0, 0.0, 1.0])
        score = criterion_binomial(y, p, np.ones(3), 2, CriterionConfig("wAIC"))
        # clamped probabilities leave a vanishing NLL, so the score is ~ g*k
        assert score == pytest.approx(4.0, abs=1e-9)

    def test_binomial_half_probability_hand_value(self):
        y = np.array([1.0, 0.0, 1.0, 0.0])
        p = np.full(4, 0.5)
        nll = 4 * np.log(2)
        for k in (1, 2):
            score = criterion_binomial(y, p, np.ones(4), k, CriterionConfig("wAIC"))
            assert score == pytest.approx(2 * nll + 2 * k)

    def test_sse_floor_keeps_score_finite(self):
        score = criterion_gaussian(np.zeros(8), np.ones(8), 2,
                                   CriterionConfig("wAIC"))
        assert np.isfinite(score)
        assert score == pytest.approx(8 * np.log(1e-12 / 8) + 4)


class TestFitSvem:
    def test_determinism_bit_identical(self, order2_spec, signal_data):
        a = fit_svem(order2_spec, signal_data, "y", B=8, rng_seed=3)
        b = fit_svem(order2_spec, signal_data, "y", B=8, rng_seed=3)
        assert np.array_equal(a.coef_matrix, b.coef_matrix)
        assert [s.lam for s in a.selections] == [s.lam for s in b.selections]

    def test_family_defaults(self, order2_spec, signal_data):
        m = fit_svem(order2_spec, signal_data, "y", B=2, rng_seed=0)
        assert m.objective == "wAIC" and m.relax is True
        binary = Dataset.from_columns({
            **{n: signal_data.column(n) for n in
               ("X1", "X2", "X3", "X4", "X5")},
            "yb": (signal_data.column("eta") > 0).astype(float)})
        mb = fit_svem(order2_spec, binary, "yb", family="binomial", B=2,
                      rng_seed=0)
        assert mb.objective == "wBIC" and mb.relax is False

    def test_constant_response_selects_intercept_only(self, order2_spec,
                                                      sim_factors_data):
        cols = {n: sim_factors_data.column(n) for n in sim_factors_data.names}
        cols["y"] = np.full(sim_factors_data.n_rows, 3.7)
        data = Dataset.from_columns(cols)
        m = fit_svem(order2_spec, data, "y", B=6, rng_seed=1)
        assert all(s.k_lambda == 1 for s in m.selections)

    def test_guardrail_on_every_selection(self, order2_spec, signal_data):
        for objective in ("wAIC", "wBIC"):
            m = fit_svem(order2_spec, signal_data, "y", B=20,
                         objective=objective, rng_seed=5)
            for s in m.selections:
                if not s.wsse_fallback:
                    assert s.k_lambda - 1 < s.n_eff_adm

    def test_selection_is_minimum(self, order2_spec, signal_data):
        # Recompute every candidate's criterion for one replicate and check
        # the stored winner is the global argmin.
        from svemkit import enet
        from svemkit.expand import expand_rows
        from svemkit.svem import _scores_gaussian

        m = fit_svem(order2_spec, signal_data, "y", B=1, rng_seed=9)
        sel = m.selections[0]
        X = expand_rows(order2_spec, signal_data).values
        y = signal_data.column("y")
        frw = draw_frw(len(y), replicate_rng(9, 0))
        best = np.inf
        for alpha in m.alpha_grid:
            fit = enet.fit_path(X, y, frw.w_train, "gaussian", alpha)
            fit = enet.relaxed_refit(fit, X, y, frw.w_train)
            scores = _scores_gaussian(X @ fit.coef.T, y, frw.w_valid,
                                      fit.k_lambda, "wAIC",
                                      kish_neff(frw.w_valid).n_eff_adm)
            best = min(best, scores.min())
        assert sel.criterion == pytest.approx(best)

    def test_binary_label_validation(self, order2_spec, signal_data):
        with pytest.raises(DataError):
            fit_svem(order2_spec, signal_data, "y", family="binomial", B=2)

    def test_b_below_one_rejected(self, order2_spec, signal_data):
        with pytest.raises(ConfigError):
            fit_svem(order2_spec, signal_data, "y", B=0)


class TestPredictSvem:
    def _tiny_model(self, order2_spec, coef_rows):
        p = len(order2_spec.term_list)
        coef = np.zeros((len(coef_rows), p))
        for i, row in enumerate(coef_rows):
            coef[i, :len(row)] = row
        return SvemModel(spec=order2_spec, family="gaussian", response="y",
                         B=len(coef_rows), coef_matrix=coef, selections=[],
                         objective="wAIC", alpha_grid=(1.0,), relax=False,
                         rng_seed=0,
                         column_names=[_n for _n in order2_spec.column_names()])

    def test_identical_members_zero_width(self, order2_spec, sim_factors_data):
        m = self._tiny_model(order2_spec, [[1.0, 2.0]] * 5)
        mean, lo, hi = predict_svem(m, sim_factors_data, interval_level=0.9)
        assert np.allclose(lo, mean) and np.allclose(hi, mean)

    def test_mean_equals_member_average(self, order2_spec, signal_data):
        model = fit_svem(order2_spec, signal_data, "y", B=12, rng_seed=2)
        members = member_predictions(model, signal_data)
        mean = predict_svem(model, signal_data)
        assert np.abs(mean - members.mean(axis=0)).max() < 1e-12

    def test_interval_brackets_mean(self, order2_spec, signal_data):
        model = fit_svem(order2_spec, signal_data, "y", B=30, rng_seed=4)
        mean, lo, hi = predict_svem(model, signal_data, interval_level=0.9)
        assert np.all(lo <= mean + 1e-9)
        assert np.all(mean <= hi + 1e-9)

    def test_binomial_predictions_in_unit_interval(self, order2_spec,
                                                   signal_data):
        binary = Dataset.from_columns({
            **{n: signal_data.column(n) for n in
               ("X1", "X2", "X3", "X4", "X5")},
            "yb": (signal_data.column("eta") > 0).astype(float)})
        model = fit_svem(order2_spec, binary, "yb", family="binomial", B=10,
                         rng_seed=6)
        mean, lo, hi = predict_svem(model, binary, interval_level=0.95)
        for arr in (mean, lo, hi):
            assert np.all((arr >= 0.0) & (arr <= 1.0))

    def test_debias_identity_for_perfect_members(self, order2_spec,
                                                 sim_factors_data):
        m = self._tiny_model(order2_spec, [[0.5, 1.5]] * 4)
        X = None
        y = member_predictions(m, sim_factors_data)[0]
        cols = {n: sim_factors_data.column(n) for n in sim_factors_data.names}
        cols["y"] = y
        data = Dataset.from_columns(cols)
        from svemkit.svem import _debias_calibration
        from svemkit.expand import expand_rows
        X = expand_rows(order2_spec, data).values
        intercept, slope = _debias_calibration(m, X, y)
        assert intercept == pytest.approx(0.0, abs=1e-9)
        assert slope == pytest.approx(1.0, abs=1e-9)

    def test_debias_degenerate_variance(self, order2_spec, sim_factors_data):
        m = self._tiny_model(order2_spec, [[2.0]] * 3)  # constant predictions
        from svemkit.svem import _debias_calibration
        from svemkit.expand import expand_rows
        X = expand_rows(order2_spec, sim_factors_data).values
        y = sim_factors_data.column("X1") + 5.0
        intercept, slope = _debias_calibration(m, X, y)
        assert slope == 0.0
        assert intercept == pytest.approx(float(y.mean()))

    def test_debias_applied_to_predictions(self, order2_spec, signal_data):
        model = fit_svem(order2_spec, signal_data, "y", B=10, debias=True,
                         rng_seed=8)
        assert model.debias is not None
        raw = member_predictions(model, signal_data).mean(axis=0)
        a, b = model.debias
        assert predict_svem(model, signal_data) == pytest.approx(a + b * raw)


class TestSerialization:
    def test_json_round_trip(self, order2_spec, signal_data, tmp_path):
        model = fit_svem(order2_spec, signal_data, "y", B=5, rng_seed=11)
        path = tmp_path / "m.json"
        save_model(model, path)
        again = load_model(path)
        assert np.array_equal(again.coef_matrix, model.coef_matrix)
        assert predict_svem(again, signal_data) == pytest.approx(
            predict_svem(model, signal_data), abs=0)

    def test_dict_round_trip_preserves_selections(self, order2_spec,
                                                  signal_data):
        model = fit_svem(order2_spec, signal_data, "y", B=3, rng_seed=12)
        doc = model_to_dict(model)
        again = model_from_dict(doc)
        assert [s.k_lambda for s in again.selections] == \
            [s.k_lambda for s in model.selections]

    def test_bad_format_rejected(self, order2_spec, signal_data):
        model = fit_svem(order2_spec, signal_data, "y", B=2, rng_seed=13)
        doc = model_to_dict(model)
        doc["format"] = "nope"
        with pytest.raises(ConfigError):
            model_from_dict(doc)
