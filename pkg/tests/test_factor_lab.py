import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from conftest import make_dataset
from paneldyn.errors import (
    DegenerateValuation,
    InsufficientHistory,
    NonPositiveTurnover,
    UnbalancedPanel,
)
from paneldyn.factor_lab import (
    FEATURE_COLUMNS,
    TARGET,
    FactorConfig,
    FeatureMatrix,
    build_features,
    decay_normalizer,
    decay_weights,
    feature_burn_in,
    fit_valuation_window,
    long_term_trend,
    project_valuation,
    resistance_flag,
    trend,
    valuation_measure,
    valuation_series,
    volatility,
    volume_trend,
)
from paneldyn.synthgen import SynthConfig, generate_raw_panel

E1 = math.exp(-1)


# weights


def test_normalizer():
    assert decay_normalizer() == pytest.approx(0.58195, abs=1e-5)
    assert math.fsum(decay_weights()) == pytest.approx(1.0, abs=1e-12)


# valuation regression


def normal_equations(y, Z):
    X = np.column_stack([np.ones(len(y)), Z])
    return np.linalg.solve(X.T @ X, X.T @ y)


def window_data(rng, n=400):
    changes = rng.normal(0, 0.01, size=(n, 4))
    returns = 0.01 + 1.2 * changes[:, 1] + 0.3 * changes[:, 0] + rng.normal(0, 1e-4, n)
    returns[0] = np.nan
    changes[0] = np.nan
    return returns, changes


def test_exact_market_relation():
    rng = np.random.default_rng(0)
    n = 300
    changes = np.zeros((n, 4))
    changes[:, 1] = rng.normal(0, 0.01, n)
    returns = 0.5 * changes[:, 1]
    c = fit_valuation_window(returns, changes, t=250)
    assert_allclose(c.alpha, [0, 0, 0.5, 0, 0], atol=1e-12)
    eff = c.effective()
    assert eff[2] == pytest.approx(0.5)
    assert np.all(eff[[0, 1, 3, 4]] == 0)


def test_zero_eps_column_is_dropped_and_zeroed():
    rng = np.random.default_rng(1)
    n = 300
    changes = rng.normal(0, 0.01, size=(n, 4))
    changes[:, 0] = 0.0
    returns = 0.5 * changes[:, 1] + rng.normal(0, 1e-3, n)
    c = fit_valuation_window(returns, changes, t=250)
    assert c.dropped == ("eps",)
    assert c.zeroed[1] and c.alpha[1] == 0.0 and c.p_values[1] == 1.0
    assert c.alpha[2] == pytest.approx(0.5, abs=0.05)


def test_window_matches_normal_equations():
    returns, changes = window_data(np.random.default_rng(2))
    for t in (190, 250, 399):
        c = fit_valuation_window(returns, changes, t)
        sl = slice(t - 189, t)
        assert_allclose(c.alpha, normal_equations(returns[sl], changes[sl]), rtol=1e-8)
        c2 = fit_valuation_window(returns, changes, t, window_includes_t=True)
        sl = slice(t - 188, t + 1)
        assert_allclose(c2.alpha, normal_equations(returns[sl], changes[sl]), rtol=1e-8)


def test_p_values_from_t_distribution():
    from scipy import stats

    returns, changes = window_data(np.random.default_rng(3))
    t = 300
    c = fit_valuation_window(returns, changes, t)
    sl = slice(t - 189, t)
    X = np.column_stack([np.ones(189), changes[sl]])
    beta = np.linalg.solve(X.T @ X, X.T @ returns[sl])
    resid = returns[sl] - X @ beta
    s2 = resid @ resid / (189 - 5)
    se = np.sqrt(s2 * np.diag(np.linalg.inv(X.T @ X)))
    p = 2 * stats.t.sf(np.abs(beta / se), 189 - 5)
    assert_allclose(c.p_values, p, rtol=1e-6, atol=1e-12)
    assert_array_equal(c.zeroed, p >= 0.10)


def test_window_needs_history():
    returns, changes = window_data(np.random.default_rng(4))
    with pytest.raises(InsufficientHistory):
        fit_valuation_window(returns, changes, t=189)  # window would include day 0
    fit_valuation_window(returns, changes, t=190)


def test_project_valuation_examples():
    assert project_valuation(np.zeros(5), [0.1, 0.2, 0.3, 0.4], 50.0) == 50.0
    assert project_valuation([0, 1, 0, 0, 0], [0.02, 0, 0, 0], 100.0) == pytest.approx(102.0)
    got = project_valuation([0.001, 0.5, 1.0, -0.2, 0.3], [0.01, 0.004, -0.01, 0.0], 50.0)
    assert got == pytest.approx(50 * (1 + 0.001 + 0.005 + 0.004 + 0.002))


@pytest.mark.parametrize("val, price, expected", [(100, 95, 0.05), (70, 70, 0.0), (80, 100, -0.25)])
def test_valuation_measure(val, price, expected):
    assert valuation_measure(val, price) == pytest.approx(expected)


def test_degenerate_valuation():
    with pytest.raises(DegenerateValuation):
        valuation_measure(1e-12, 100.0)


def test_all_zeroed_valuation_is_price_change():
    # flat returns: every coefficient is zero with p = 1
    n = 260
    prices = np.linspace(100, 120, n)
    returns = np.full(n, np.nan)
    changes = np.full((n, 4), np.nan)
    returns[1:] = 0.0
    changes[1:] = np.random.default_rng(5).normal(0, 0.01, size=(n - 1, 4))
    val, _, zeroed = valuation_series(prices, returns, changes)
    t = np.arange(190, n)
    assert zeroed[t].all()
    assert_allclose(val[t], (prices[t - 1] - prices[t]) / prices[t - 1], rtol=1e-12)


# trend, volatility, long-term trend


def test_trend_examples():
    assert trend(np.full(11, 0.003)) == pytest.approx(0.0, abs=1e-15)
    assert trend(np.r_[np.zeros(10), 0.01]) == pytest.approx(0.01)
    r = np.zeros(11)
    r[-2] = 0.01
    oracle = r[-1] - sum(math.exp(-k) * r[-1 - k] for k in range(1, 11)) / decay_normalizer()
    assert trend(r) == pytest.approx(oracle, rel=1e-12)
    assert trend(r) == pytest.approx(-0.006322, abs=1e-6)


def test_trend_needs_history():
    with pytest.raises(InsufficientHistory):
        trend(np.zeros(10))


def test_volatility_examples(rng):
    assert volatility(np.full(11, 0.02)) == pytest.approx(0.0, abs=1e-15)
    assert volatility(np.zeros(11)) == 0.0
    assert volatility([0.01, 0.02, 0.03], 2) == pytest.approx(0.01)
    r = rng.normal(0, 0.02, 11)
    m = sum(r) / 11
    oracle = math.sqrt(sum((x - m) ** 2 for x in r) / 10)
    assert volatility(r, 10) == pytest.approx(oracle, rel=1e-12)


def test_long_term_trend_examples(rng):
    assert long_term_trend(np.full(251, 0.001)) == pytest.approx(0.0, abs=1e-15)
    k = np.arange(1, 252)
    assert long_term_trend(0.003 + 2e-5 * k) == pytest.approx(251 * 2e-5, rel=1e-9)
    r = rng.normal(0, 0.02, 251)
    kc = k - k.mean()
    oracle = (kc * (r - r.mean())).sum() / (kc @ kc) * 251
    assert long_term_trend(r) == pytest.approx(oracle, rel=1e-10)


# resistance


def resistance_path(dip=80.0, now=90.0):
    p = np.full(64, 95.0)
    p[0] = 100.0  # t-63 is the high
    p[63 - 15: 63 - 10 + 1] = dip
    p[-1] = now
    return p


def test_resistance_examples():
    assert resistance_flag(resistance_path()) == 1
    assert resistance_flag(resistance_path(now=101.0)) == 0
    assert resistance_flag(resistance_path(dip=90.0)) == 0


def test_resistance_boundaries():
    assert resistance_flag(resistance_path(dip=85.0, now=85.0)) == 1
    assert resistance_flag(resistance_path(now=100.0)) == 1
    assert resistance_flag(resistance_path(now=84.9)) == 0


# volume


def test_volume_examples():
    assert volume_trend(np.full(11, 5.0)) == 0.0
    assert volume_trend(2.0 ** np.arange(11)) == pytest.approx(1.0)
    v = np.full(11, 100.0)
    v[-1] = 110.0
    assert volume_trend(v) == pytest.approx(0.1 * E1 / decay_normalizer())
    assert volume_trend(v) == pytest.approx(0.06322, abs=1e-5)


def test_volume_rejects_zero_turnover():
    v = np.full(11, 5.0)
    v[3] = 0.0
    with pytest.raises(NonPositiveTurnover):
        volume_trend(v)


# feature matrix


def test_burn_in_counts():
    leading, trailing = feature_burn_in()
    assert (leading, trailing) == (252, 1)
    leading_t, _ = feature_burn_in(FactorConfig(window_includes_t=True))
    assert leading_t == 252  # still bound by long volatility


def test_one_row_per_firm_when_exactly_long_enough():
    n_days = sum(feature_burn_in()) + 1
    ds = generate_raw_panel(SynthConfig(n_firms=3, n_days=n_days, seed=7))
    fm = build_features(ds)
    assert fm.n_days == 1 and fm.n_firms == 3
    with pytest.raises(InsufficientHistory):
        build_features(ds.truncate(n_days - 1))


def test_row_count_is_days_minus_burn_in():
    ds = generate_raw_panel(SynthConfig(n_firms=2, n_days=400, seed=8))
    fm = build_features(ds)
    assert fm.n_days == 400 - sum(feature_burn_in())
    assert set(FEATURE_COLUMNS) | {TARGET} == set(fm.columns)
    assert set(np.unique(fm["resistance"])) <= {0.0, 1.0}
    for name in fm.columns:
        assert np.all(np.isfinite(fm[name]))


def test_target_is_next_day_return():
    ds = generate_raw_panel(SynthConfig(n_firms=2, n_days=300, seed=9))
    fm = build_features(ds)
    j = ds.dates.index(fm.dates[0])
    p = ds.adj_close
    assert_allclose(fm[TARGET][:, 0], (p[:, j + 1] - p[:, j]) / p[:, j], rtol=1e-12)


def test_truncation_leaves_earlier_rows_unchanged():
    ds = generate_raw_panel(SynthConfig(n_firms=3, n_days=320, seed=10))
    full = build_features(ds)
    for cut in (300, 311):
        part = build_features(ds.truncate(cut))
        k = part.n_days
        assert full.dates[:k] == part.dates
        for name in FEATURE_COLUMNS:
            assert_array_equal(part[name], full[name][:, :k])


def test_thread_count_does_not_change_features():
    ds = generate_raw_panel(SynthConfig(n_firms=5, n_days=300, seed=11))
    a = build_features(ds, FactorConfig(threads=1))
    b = build_features(ds, FactorConfig(threads=4))
    for name in a.columns:
        assert_array_equal(a[name], b[name])


def test_constant_prices_give_zero_features():
    ds = generate_raw_panel(SynthConfig.constant_prices(2, 300))
    fm = build_features(ds)
    for name in ("trend", "short_volatility", "long_volatility", "long_term_trend", "volume",
                 "valuation", TARGET):
        assert np.all(fm[name] == 0.0), name


def test_resistance_is_rare_on_random_walks():
    ds = generate_raw_panel(SynthConfig(n_firms=10, n_days=800, seed=12))
    fm = build_features(ds)
    assert fm["resistance"].mean() < 0.10


def test_feature_csv_round_trip(tmp_path):
    ds = generate_raw_panel(SynthConfig(n_firms=2, n_days=270, seed=13))
    fm = build_features(ds)
    fm.write_csv(tmp_path / "f.csv")
    back = FeatureMatrix.read_csv(tmp_path / "f.csv")
    assert back.firms == fm.firms and back.dates == fm.dates
    for name in fm.columns:
        assert_array_equal(back[name], fm[name])


def test_feature_frame_must_be_balanced():
    fm = FeatureMatrix(("a", "b"), ("d1", "d2"), {"x": np.ones((2, 2))})
    frame = fm.to_frame().iloc[:3]
    with pytest.raises(UnbalancedPanel):
        FeatureMatrix.from_frame(frame)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.1, 0.1), min_size=11, max_size=11), st.floats(-0.05, 0.05))
def test_trend_is_shift_invariant(returns, shift):
    r = np.array(returns)
    assert trend(r + shift) == pytest.approx(trend(r), abs=1e-12)


def test_zero_turnover_in_dataset_raises():
    n = 260
    turnover = np.full((1, n), 100.0)
    turnover[0, 250] = 0.0
    prices = 100 * np.cumprod(1 + np.random.default_rng(0).normal(0, 0.01, (1, n)), axis=1)
    eps = 5 * np.cumprod(1 + np.random.default_rng(1).normal(0, 0.01, (1, n)), axis=1)
    ds = make_dataset(prices, turnover=turnover, eps=eps,
                      spx=1000 * np.cumprod(1 + np.random.default_rng(2).normal(0, 0.01, n)))
    with pytest.raises(NonPositiveTurnover):
        build_features(ds)
