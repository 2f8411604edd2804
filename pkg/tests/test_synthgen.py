import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from paneldyn.factor_lab import FEATURE_COLUMNS, TARGET, build_features
from paneldyn.model_suite import fit_model
from paneldyn.panel_store import compute_returns
from paneldyn.surface import reduce_surface, trend_geometry
from paneldyn.synthgen import (
    DEFAULT_FEEDBACK,
    MAX_ORACLE_DAYS,
    SynthConfig,
    business_dates,
    feature_matrix_from_arrays,
    generate_feature_panel,
    generate_raw_panel,
    oracle_lsdv,
    tickers,
)


def test_zero_noise_exact_recovery():
    beta = {"valuation": 0.3, "trend": -0.2, "trend^3": 0.05}
    cfg = SynthConfig(n_firms=8, n_days=60, seed=4, beta=beta, noise_sd=0.0, firm_effect_sd=0.1)
    rep = fit_model("3", generate_feature_panel(cfg).features)
    for row in rep.rows:
        assert row.coef == pytest.approx(beta.get(row.name, 0.0), abs=1e-8)


def test_same_seed_identical():
    cfg = SynthConfig(n_firms=5, n_days=40, seed=9, beta={"trend": 1.0})
    a, b = generate_feature_panel(cfg), generate_feature_panel(cfg)
    for c in a.features.columns:
        assert_array_equal(a.features[c], b.features[c])
    assert generate_raw_panel(cfg).equals(generate_raw_panel(cfg))
    other = generate_feature_panel(SynthConfig(n_firms=5, n_days=40, seed=10)).features
    assert not np.array_equal(other["trend"], a.features["trend"])


def test_firm_draws_independent_of_panel_size():
    small = generate_raw_panel(SynthConfig(n_firms=5, n_days=30, seed=2))
    large = generate_raw_panel(SynthConfig(n_firms=9, n_days=30, seed=2))
    for i, firm in enumerate(small.firms):
        j = large.firms.index(firm)
        assert_array_equal(small.adj_close[i], large.adj_close[j])
    fs = generate_feature_panel(SynthConfig(n_firms=5, n_days=30, seed=2)).features
    fl = generate_feature_panel(SynthConfig(n_firms=9, n_days=30, seed=2)).features
    for i, firm in enumerate(fs.firms):
        assert_array_equal(fs["valuation"][i], fl["valuation"][fl.firms.index(firm)])


def test_labels_sorted_and_regressors_standardized():
    syn = generate_feature_panel(SynthConfig(n_firms=12, n_days=80, seed=1))
    fm = syn.features
    assert list(fm.firms) == sorted(fm.firms)
    for name in FEATURE_COLUMNS:
        if name == "resistance":
            assert set(np.unique(fm[name])) <= {0.0, 1.0}
            continue
        assert np.all(np.abs(fm[name].mean(axis=1)) < 1e-12)
        assert_allclose(fm[name].std(axis=1, ddof=1), 1.0, rtol=1e-12)
    truth = syn.truth
    resid = fm[TARGET] - truth.firm_effects[:, None] - truth.time_effects[None, :] - truth.noise
    assert_allclose(resid, 0.0, atol=1e-15)


def test_implanted_cubic_extrema():
    cfg = SynthConfig(n_firms=20, n_days=500, seed=0, beta=DEFAULT_FEEDBACK)
    surf = reduce_surface(fit_model("3", generate_feature_panel(cfg).features))
    g = trend_geometry(surf)
    assert g.local_max_t == pytest.approx(1.634, abs=0.25)
    assert g.local_min_t == pytest.approx(-1.634, abs=0.25)


def test_raw_panel_shape():
    ds = generate_raw_panel(SynthConfig(n_firms=3, n_days=300, seed=1))
    fm = build_features(ds)
    assert fm.n_days == 300 - 253
    assert ds.dates == business_dates(300)
    assert np.all(ds.adj_close > 0) and np.all(ds.turnover > 0)


def test_constant_prices_give_zero_features():
    fm = build_features(generate_raw_panel(SynthConfig.constant_prices(2, 270)))
    for name in ("trend", "short_volatility", "long_volatility", "long_term_trend", "volume"):
        assert np.all(fm[name] == 0.0), name


def test_no_revisions_flat_eps():
    ds = generate_raw_panel(SynthConfig(n_firms=3, n_days=100, revision_prob=0.0))
    assert np.all(compute_returns(ds).eps_change == 0.0)
    revised = generate_raw_panel(SynthConfig(n_firms=3, n_days=400, revision_prob=0.27))
    share = np.mean(compute_returns(revised).eps_change != 0.0)
    assert 0.2 < share < 0.34


def test_feedback_changes_returns():
    plain = generate_raw_panel(SynthConfig(n_firms=3, n_days=60, seed=5))
    fed = generate_raw_panel(SynthConfig(n_firms=3, n_days=60, seed=5, feedback=DEFAULT_FEEDBACK))
    assert_array_equal(plain.adj_close[:, :12], fed.adj_close[:, :12])
    assert not np.array_equal(plain.adj_close, fed.adj_close)


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(n_firms=0)
    with pytest.raises(ValueError):
        SynthConfig(noise_sd=-1.0)
    with pytest.raises(ValueError):
        SynthConfig(beta={"momentum": 1.0})


def test_ticker_fillers():
    names = tickers(100)
    assert len(set(names)) == 100
    assert names[-1].startswith("F")
    assert len(tickers(balanced_only=True)) == 85


def test_lsdv_zero_effects():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(4, 6, 2))
    y = X @ np.array([1.5, -0.5])
    res = oracle_lsdv(feature_matrix_from_arrays(y, X, ["a", "b"]), ["a", "b"])
    assert_allclose(res.slopes, [1.5, -0.5], atol=1e-12)
    assert_allclose(res.firm_coefs, 0.0, atol=1e-12)
    assert_allclose(res.day_coefs, 0.0, atol=1e-12)


def test_lsdv_two_by_two_hand_solution():
    x = np.array([[1.0, 4.0], [2.0, 9.0]])
    y = np.array([[0.5, 2.0], [3.0, 1.0]])
    res = oracle_lsdv(feature_matrix_from_arrays(y, x, ["x"]), ["x"])
    contrast = lambda a: a[0, 0] - a[0, 1] - a[1, 0] + a[1, 1]
    assert res.slopes[0] == pytest.approx(contrast(y) / contrast(x))


def test_lsdv_size_limit():
    y = np.zeros((2, MAX_ORACLE_DAYS + 1))
    with pytest.raises(ValueError):
        oracle_lsdv(feature_matrix_from_arrays(y, y[..., None], ["x"]), ["x"])
