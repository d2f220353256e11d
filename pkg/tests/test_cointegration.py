import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from statsmodels.tsa.stattools import adfuller

from pairsbl.cointegration import (
    OlsFit,
    OuParams,
    PairScanResult,
    adf_test,
    cumulative_residuals,
    engle_granger,
    evaluate_pair,
    fit_ou,
    ols_regress,
    scan_pairs,
    select_pairs,
)
from pairsbl.errors import (
    DegenerateRegressionError,
    DegenerateSeriesError,
    InsufficientDataError,
    NonMeanRevertingError,
    ValidationError,
)
from pairsbl.marketdata import CandidatePair, ReturnPanel, compute_returns, prescreen
from pairsbl.synthetic import generate, ou_path


def simulate_ou(rng, n, k, m, s):
    return m + ou_path(rng, n, k, s)


# --- OLS ---------------------------------------------------------------


def test_ols_identity_and_exact_line():
    x = np.linspace(-0.02, 0.03, 40)
    fit = ols_regress(x, x)
    assert fit.a == pytest.approx(0, abs=1e-15) and fit.b == pytest.approx(1, abs=1e-12)
    assert np.max(np.abs(fit.residuals)) < 1e-15
    fit = ols_regress(2 * x + 0.01, x)
    assert fit.a == pytest.approx(0.01, abs=1e-14) and fit.b == pytest.approx(2, abs=1e-12)


def test_ols_matches_closed_form_normal_equations():
    rng = np.random.default_rng(3)
    x = rng.normal(0, 0.01, 60)
    y = 0.0002 + 1.5 * x + rng.normal(0, 0.004, 60)
    n = len(x)
    sx, sy, sxx, sxy = x.sum(), y.sum(), (x * x).sum(), (x * y).sum()
    b = (n * sxy - sx * sy) / (n * sxx - sx * sx)
    a = (sy - b * sx) / n
    fit = ols_regress(y, x)
    assert abs(fit.b - b) < 1e-10 and abs(fit.a - a) < 1e-10
    assert abs(fit.residuals.sum()) < 1e-10 * n


def test_ols_degenerate_regressor():
    with pytest.raises(DegenerateRegressionError):
        ols_regress(np.arange(5.0), np.full(5, 0.01))
    with pytest.raises(InsufficientDataError):
        ols_regress([1.0, 2.0], [1.0, 3.0])


# --- cumulative residuals ------------------------------------------------


def test_cumulative_residuals_examples():
    sp = cumulative_residuals(OlsFit(0.0, 1.0, np.array([1.0, -1.0, 0.0])))
    assert sp.values.tolist() == [1.0, 0.0, 0.0]
    assert np.all(cumulative_residuals(OlsFit(0.0, 1.0, np.zeros(4))).values == 0)


def test_spread_ends_at_zero_with_intercept():
    rng = np.random.default_rng(11)
    x = rng.normal(0, 0.01, 60)
    y = 1.1 * x + rng.normal(0, 0.01, 60)
    sp = cumulative_residuals(ols_regress(y, x))
    assert sp.window == 60
    assert abs(sp.last) < 1e-10 * 60


# --- ADF -----------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("lag", [0, 1, 3])
def test_adf_statistic_matches_statsmodels(seed, lag):
    rng = np.random.default_rng(seed)
    x = np.cumsum(rng.normal(size=300)) if seed % 2 else simulate_ou(rng, 300, 0.2, 0.0, 1.0)
    ours = adf_test(x, lag_order=lag)
    ref = adfuller(x, maxlag=lag, regression="c", autolag=None)
    assert ours.statistic == pytest.approx(ref[0], rel=1e-9, abs=1e-9)
    assert ours.nobs == ref[3]


def test_adf_decision_rule_and_tables():
    rng = np.random.default_rng(0)
    x = simulate_ou(rng, 200, 0.5, 0.0, 1.0)
    res = adf_test(x)
    assert res.stationary == (res.statistic < res.critical_value_5pct)
    assert res.critical_value == -2.86
    eg = adf_test(x, critical="eg")
    assert eg.critical_value == -3.34 and eg.critical_value_5pct == -3.34
    assert adf_test(x, alpha=0.01).critical_value == -3.43
    with pytest.raises(ValidationError):
        adf_test(x, alpha=0.2)


def test_adf_errors():
    with pytest.raises(DegenerateSeriesError):
        adf_test(np.full(50, 3.0))
    with pytest.raises(InsufficientDataError):
        adf_test(np.arange(10.0), lag_order=1)


@given(st.floats(-1e3, 1e3, allow_nan=False))
@settings(max_examples=30, deadline=None)
def test_adf_invariant_to_constant_shift(c):
    x = simulate_ou(np.random.default_rng(5), 120, 0.3, 0.0, 1.0)
    assert adf_test(x + c).statistic == pytest.approx(adf_test(x).statistic, rel=1e-6)


def test_adf_size_and_power_smaller_sample():
    # quick version; the 500-seed run lives in the acceptance suite
    rw = ar = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        rw += adf_test(np.cumsum(rng.normal(size=500))).stationary
        e = rng.normal(size=500)
        y = np.empty(500)
        y[0] = e[0]
        for i in range(1, 500):
            y[i] = 0.3 * y[i - 1] + e[i]
        ar += adf_test(y).stationary
    assert rw <= 12 and ar >= 95


# --- Engle-Granger --------------------------------------------------------


def test_engle_granger_planted_construction_mostly_cointegrated():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        r2 = rng.normal(0, 0.01, 60)
        z = rng.normal(0, 0.005, 61)
        e = np.zeros(61)
        for i in range(1, 61):
            e[i] = 0.3 * e[i - 1] + z[i]
        hits += engle_granger(1.2 * r2 + np.diff(e), r2, window=60).cointegrated
    assert hits >= 90


def test_engle_granger_independent_walks_rarely_cointegrated():
    hits = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        p1 = 100 * np.cumprod(1 + 0.0005 + rng.normal(0, 0.01, 61))
        p2 = 100 * np.cumprod(1 + 0.0005 + rng.normal(0, 0.01, 61))
        hits += engle_granger(p1[1:] / p1[:-1] - 1, p2[1:] / p2[:-1] - 1).cointegrated
    assert hits <= 30


def test_engle_granger_identical_series_is_degenerate():
    r = np.random.default_rng(1).normal(0, 0.01, 60)
    with pytest.raises(DegenerateSeriesError):
        engle_granger(r, r)


def test_engle_granger_uses_trailing_window():
    rng = np.random.default_rng(2)
    r1, r2 = rng.normal(size=100), rng.normal(size=100)
    full = engle_granger(r1, r2, window=60)
    tail = engle_granger(r1[-60:], r2[-60:], window=60)
    assert full.adf.statistic == tail.adf.statistic
    with pytest.raises(InsufficientDataError):
        engle_granger(r1[:50], r2[:50], window=60)


# --- OU fit ---------------------------------------------------------------


def test_ou_recovers_parameters():
    x = simulate_ou(np.random.default_rng(2024), 10_000, 0.25, 0.0, 0.1)
    ou = fit_ou(x)
    assert abs(ou.k / 0.25 - 1) <= 0.15
    assert abs(ou.m) <= 0.02
    assert abs(ou.s / 0.1 - 1) <= 0.05
    assert ou.s_eq == pytest.approx(ou.s / math.sqrt(2 * ou.k), rel=1e-12)


def test_ou_noise_free_decay():
    x = 0.5 ** np.arange(20)
    ou = fit_ou(x)
    assert ou.k == pytest.approx(math.log(2), rel=1e-10)
    assert ou.m == pytest.approx(0.0, abs=1e-10)


def test_ou_rejects_trend_and_constant():
    with pytest.raises(NonMeanRevertingError):
        fit_ou(1.05 ** np.arange(50))
    with pytest.raises(DegenerateSeriesError):
        fit_ou(np.full(30, 2.0))
    with pytest.raises(InsufficientDataError):
        fit_ou(np.arange(5.0))


def test_ou_error_shrinks_with_length():
    errs = []
    for n in (1_000, 10_000, 100_000):
        e = [abs(fit_ou(simulate_ou(np.random.default_rng(s), n, 0.2, 0.0, 0.1)).k - 0.2) for s in range(8)]
        errs.append(np.mean(e))
    assert errs[0] > errs[1] > errs[2]


def test_equilibrium_variance_matches_long_path():
    x = simulate_ou(np.random.default_rng(8), 200_000, 0.1, 0.0, 0.05)
    ou = fit_ou(x)
    assert abs(ou.s_eq**2 / np.var(x) - 1) < 0.05


def test_ou_params_validation():
    with pytest.raises(ValidationError):
        OuParams(k=0.0, m=0.0, s=0.1)
    with pytest.raises(ValidationError):
        OuParams(k=0.1, m=0.0, s=-1.0)


# --- selection --------------------------------------------------------------


class _Adf:
    def __init__(self, stationary):
        self.stationary = stationary


class _Eg:
    def __init__(self, stationary):
        self.adf = _Adf(stationary)

    @property
    def cointegrated(self):
        return self.adf.stationary


def cand(sector, a, b, days, stationary=True, s=0.01):
    return PairScanResult(CandidatePair(sector, a, b), eg=_Eg(stationary), ou=OuParams(1.0 / days, 0.0, s, 1.0))


def test_select_fastest_within_bounds():
    got = select_pairs([cand("X", "A", "B", 9), cand("X", "A", "C", 6), cand("Y", "D", "E", 3)], 5, 27)
    assert set(got) == {"X"}
    assert got["X"].pair.ticker_b == "C"


def test_select_boundaries():
    assert select_pairs([cand("X", "A", "B", 30)], 5, 27) == {}
    assert select_pairs([cand("X", "A", "B", 27)], 5, 27) == {}
    assert "X" in select_pairs([cand("X", "A", "B", 5)], 5, 27)
    assert select_pairs([cand("X", "A", "B", 6, stationary=False)], 5, 27) == {}
    assert select_pairs([cand("X", "A", "B", 6, s=0.0)], 5, 27) == {}


def test_select_never_two_per_sector():
    rng = np.random.default_rng(0)
    cs = [cand(f"S{i % 3}", "A", f"B{i}", float(rng.uniform(4, 30))) for i in range(60)]
    got = select_pairs(cs, 5, 27)
    assert len(got) == len({r.sector for r in got.values()}) <= 3


# --- scan -------------------------------------------------------------------


def test_scan_parallel_matches_serial_and_finds_planted_pairs():
    panel, universe, planted = generate(3)
    rets = compute_returns(panel)
    pairs = prescreen(panel, universe)
    serial = scan_pairs(rets, pairs, window=250)
    parallel = scan_pairs(rets, pairs, window=250, workers=4)
    for a, b in zip(serial, parallel):
        assert a.pair == b.pair and a.error == b.error
        assert a.to_dict()["adf_stat"] == b.to_dict()["adf_stat"] or a.eg is None
    stationary = {r.pair for r in serial if r.stationary}
    assert set(planted.values()) <= stationary


def test_evaluate_pair_records_errors():
    dates = tuple(dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(70))
    r = np.zeros((70, 2))
    r[:, 1] = np.random.default_rng(0).normal(size=70)
    rp = ReturnPanel(dates, ("A", "B"), r)
    res = evaluate_pair(rp, CandidatePair("S", "B", "A"), window=60)
    assert res.error and "DegenerateRegression" in res.error
    assert not res.stationary
    row = res.to_dict()
    assert set(row) >= {"sector", "ticker_a", "ticker_b", "b_hat", "adf_stat", "stationary", "k", "m", "s_eq", "reversion_days"}
