import numpy as np
import pytest

from itepred.dgm import DgmConfig, simulate, true_model
from itepred.errors import DegenerateNull, LengthMismatch, SingleClass, TooFewSubjects
from itepred.evaluation import (bootstrap_validate, brier, c_statistic, calibration_bins,
                                evaluate, nagelkerke_r2, null_log_likelihood, quantile_abs_error,
                                quantile_groups, rmspe, te_calibration_from_delta,
                                te_quintile_calibration)
from itepred.strategies import STRATEGY_IDS, LinearPredictor
from itepred.tabular import Coefficients, Dataset, DesignSpec

from conftest import random_trial
from oracles import brute_force_c


def test_rmspe_examples():
    t = np.array([0.1, -0.2, 0.05])
    assert rmspe(t, t) == 0
    assert rmspe(t + 0.03, t) == pytest.approx(0.03, abs=1e-15)
    assert rmspe([0.1, 0.3], [0.2, 0.2]) == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(LengthMismatch):
        rmspe([0.1], [0.1, 0.2])


def test_rmspe_metric_properties():
    rng = np.random.default_rng(0)
    a, b, c = rng.uniform(-0.5, 0.5, (3, 50))
    assert rmspe(a, b) == rmspe(b, a)
    assert rmspe(a, c) <= rmspe(a, b) + rmspe(b, c)


def test_quantile_abs_error():
    t = np.zeros(5)
    assert quantile_abs_error(t, t) == 0
    assert quantile_abs_error(np.full(7, 0.1), np.zeros(7)) == pytest.approx(0.1)
    assert quantile_abs_error([0.0, 0.1, 0.2, 0.3, 0.4], t, 0.9) == pytest.approx(0.36, abs=1e-12)


def test_calibration_bins():
    p = np.linspace(-0.3, 0.1, 100)
    bins = calibration_bins(p, p, 20)
    assert np.all(bins.count == 5)
    np.testing.assert_allclose(bins.mean_predicted, bins.mean_reference)
    uneven = calibration_bins(np.arange(43.0), np.arange(43.0), 20)
    assert uneven.count.tolist() == [3, 3, 3] + [2] * 17
    const = calibration_bins(np.zeros(40), np.arange(40.0), 20)
    # ties keep original order: bin k holds rows 2k, 2k+1
    np.testing.assert_allclose(const.mean_reference, np.arange(20) * 2 + 0.5)
    with pytest.raises(TooFewSubjects):
        calibration_bins(np.zeros(5), np.zeros(5), 20)


def test_brier():
    y = np.array([1, 0, 1, 1])
    assert brier(y.astype(float), y) == 0
    assert brier(np.full(4, 0.5), y) == 0.25
    assert brier([0.8, 0.3], [1, 0]) == pytest.approx(0.065, abs=1e-12)
    pbar, ybar = 0.3, y.mean()
    assert brier(np.full(4, pbar), y) == pytest.approx(ybar * (1 - ybar) + (pbar - ybar) ** 2,
                                                       abs=1e-12)


def test_nagelkerke():
    assert nagelkerke_r2(-5.0, -5.0, 10) == 0
    assert nagelkerke_r2(0.0, -5.0, 10) == pytest.approx(1.0)
    y = np.array([1, 1, 0, 0])
    ll1 = 2 * np.log(0.9) + 2 * np.log(0.8)
    ll0 = 4 * np.log(0.5)
    assert null_log_likelihood(y) == pytest.approx(ll0, abs=1e-12)
    expected = (1 - np.exp(0.5 * (ll0 - ll1))) / (1 - np.exp(0.5 * ll0))
    assert nagelkerke_r2(ll1, ll0, 4) == pytest.approx(expected, abs=1e-12)
    assert nagelkerke_r2(-6.0, -5.0, 10) < 0
    with pytest.raises(DegenerateNull):
        nagelkerke_r2(0.0, 0.0, 4)


def test_c_statistic():
    assert c_statistic([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    assert c_statistic([0.1, 0.2, 0.9], [0, 0, 1]) == 1.0
    assert c_statistic(np.full(6, 0.3), [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(SingleClass):
        c_statistic([0.1, 0.2], [1, 1])


@pytest.mark.parametrize("seed", range(10))
def test_c_statistic_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 200))
    risk = np.round(rng.random(n), 1)  # many ties
    y = rng.integers(0, 2, n)
    y[:2] = [0, 1]
    assert c_statistic(risk, y) == brute_force_c(risk, y)


def test_evaluate_report():
    rng = np.random.default_rng(1)
    d = rng.uniform(-0.2, 0, 400)
    r = rng.uniform(0.05, 0.9, 400)
    y = (rng.random(400) < r).astype(int)
    rep = evaluate(d, d, r, r, y)
    assert rep.rmspe == 0 and rep.q90_abs_delta_err == 0 and rep.q90_abs_risk_err == 0
    assert 0 <= rep.brier <= 1 and 0 <= rep.c_statistic <= 1 and rep.nagelkerke_r2 <= 1
    assert rep.calibration.n_bins == 20


def test_quantile_groups_ties():
    np.testing.assert_array_equal(quantile_groups(np.zeros(10), 5), 0)
    g = quantile_groups([1, 2, 2, 2, 3, 4, 5, 6, 7, 8], 5)
    np.testing.assert_array_equal(g, [0, 0, 0, 0, 2, 2, 3, 3, 4, 4])
    assert np.bincount(quantile_groups(np.arange(100.0), 5)).tolist() == [20] * 5


def test_te_calibration_counts_and_se():
    rng = np.random.default_rng(2)
    d = rng.standard_normal(100)
    a = np.tile([0, 1], 50)
    y = rng.integers(0, 2, 100)
    bins = te_calibration_from_delta(d, a, y, 5)
    assert bins.count.tolist() == [20] * 5
    g = quantile_groups(d, 5) == 0
    p1, p0 = y[g & (a == 1)].mean(), y[g & (a == 0)].mean()
    n1, n0 = (g & (a == 1)).sum(), (g & (a == 0)).sum()
    assert bins.mean_reference[0] == pytest.approx(p1 - p0)
    assert bins.se[0] == pytest.approx(np.sqrt(p1 * (1 - p1) / n1 + p0 * (1 - p0) / n0))


def test_te_calibration_constant_delta_flags_groups():
    data = random_trial(200, 2, seed=3)
    bins = te_calibration_from_delta(np.full(200, -0.1), data.treatment, data.outcome, 5)
    assert bins.count.tolist() == [200, 0, 0, 0, 0]
    assert bins.degenerate.tolist() == [False, True, True, True, True]
    assert np.isnan(bins.mean_reference[1:]).all()


def test_te_calibration_true_model_on_diagonal():
    m = true_model(DgmConfig(heterogeneous=True))
    t = simulate(m, 100_000, np.random.default_rng(8))
    bins = te_calibration_from_delta(t.true_delta, t.dataset.treatment, t.dataset.outcome, 5)
    assert np.all(np.abs(bins.mean_reference - bins.mean_predicted) <= 2 * bins.se + 1e-3)
    pred = LinearPredictor(Coefficients(m.beta0, m.beta_t, m.beta_m, m.beta_z,
                                        ("intercept", "treatment") + ("main",) * 12
                                        + ("interaction",) * 12),
                           DesignSpec.full(12), 12)
    via_pred = te_quintile_calibration(pred, t.dataset, 5)
    np.testing.assert_allclose(via_pred.mean_reference, bins.mean_reference)


def test_bootstrap_deterministic_and_oob_fraction():
    data = random_trial(300, 3, seed=4)
    a = bootstrap_validate(data, STRATEGY_IDS["overall"], B=1, seed=5)
    b = bootstrap_validate(data, STRATEGY_IDS["overall"], B=1, seed=5)
    assert a.records == b.records
    res = bootstrap_validate(data, STRATEGY_IDS["overall"], B=200, seed=1)
    # rows left out: (1 - 1/n)^n ~ 1/e; distinct rows drawn: ~ 1 - 1/e
    assert res.oob_fraction == pytest.approx(np.exp(-1), abs=0.02)
    assert res.inbag_fraction == pytest.approx(1 - np.exp(-1), abs=0.02)
    assert all(r["status"] == "ok" for r in res.records)


def test_bootstrap_overall_brier_on_null_data():
    rng = np.random.default_rng(6)
    n = 500
    data = Dataset(rng.standard_normal((n, 2)), rng.integers(0, 2, n),
                   (rng.random(n) < 0.3).astype(int), ("x1", "x2"))
    res = bootstrap_validate(data, STRATEGY_IDS["overall"], B=100, seed=2)
    pbar = data.outcome.mean()
    assert res.brier == pytest.approx(pbar * (1 - pbar), abs=0.01)


def test_bootstrap_flexible_model_on_small_null_data():
    rng = np.random.default_rng(7)
    n = 150
    data = Dataset(rng.standard_normal((n, 6)), rng.integers(0, 2, n),
                   (rng.random(n) < 0.4).astype(int), tuple(f"x{j}" for j in range(6)))
    res = bootstrap_validate(data, STRATEGY_IDS["hte-ml"], B=100, seed=3)
    assert res.nagelkerke_r2 <= 0.01


def test_bootstrap_optimism_mode():
    data = random_trial(300, 3, seed=9)
    res = bootstrap_validate(data, STRATEGY_IDS["hom-ml"], B=20, seed=1, mode="optimism")
    assert res.mode == "optimism"
    assert res.nagelkerke_r2 <= res.apparent_r2
    with pytest.raises(ValueError):
        bootstrap_validate(data, STRATEGY_IDS["hom-ml"], B=0)
