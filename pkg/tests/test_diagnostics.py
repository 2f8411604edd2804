import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from paneldyn.diagnostics import (
    PROBE_LEVELS,
    gaussian_scores,
    normality_correlation,
    quantile_compare,
)
from paneldyn.errors import TooFewObservations

RESIDUAL_SD = 0.01492


def test_gaussian_reference_quantiles(rng):
    qc = quantile_compare(rng.normal(size=20000), sd=RESIDUAL_SD, mean=0.0)
    g = dict(zip(qc.levels, qc.gaussian))
    assert g[0.01] == pytest.approx(-0.0347, abs=5e-4)
    assert g[0.99] == pytest.approx(0.0347, abs=5e-4)
    assert g[0.0001] == pytest.approx(-0.0555, abs=5e-4)
    assert g[0.9999] == pytest.approx(0.0555, abs=5e-4)


def test_symmetric_sample_median_zero():
    x = np.concatenate([np.arange(1.0, 501.0), -np.arange(1.0, 501.0)])
    qc = quantile_compare(x, levels=[0.1, 0.5, 0.9])
    assert qc.empirical[1] == 0.0
    assert qc.empirical[0] == -qc.empirical[2]


def test_empirical_non_decreasing(rng):
    qc = quantile_compare(rng.standard_t(3, size=50000))
    assert np.all(np.diff(qc.empirical) >= 0)
    assert tuple(qc.levels) == PROBE_LEVELS and qc.dropped == ()


def test_tail_ratio_near_one_for_gaussian(rng):
    qc = quantile_compare(rng.normal(2.0, 3.0, size=200000), levels=[0.01, 0.1, 0.9, 0.99])
    assert_allclose(qc.tail_ratio, 1.0, atol=0.1)


def test_tail_ratio_oracle():
    x = np.linspace(-1, 1, 1001)
    qc = quantile_compare(x, levels=[0.10], sd=0.5, mean=0.0)
    assert qc.tail_ratio[0] == pytest.approx(stats.norm.cdf(-0.8, 0, 0.5) / 0.10)


def test_unsupported_default_levels_dropped(rng):
    with pytest.warns(UserWarning):
        qc = quantile_compare(rng.normal(size=500))
    assert set(qc.dropped) == {0.0001, 0.001, 0.999, 0.9999}
    assert tuple(qc.levels) == (0.01, 0.10, 0.50, 0.90, 0.99)


def test_unsupported_requested_level_raises(rng):
    with pytest.raises(TooFewObservations):
        quantile_compare(rng.normal(size=500), levels=[0.001])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        quantile_compare(rng.normal(size=1000), levels=[0.001])


def test_location_scale(rng):
    x = rng.normal(size=10000)
    a = quantile_compare(x)
    b = quantile_compare(3.0 + 2.5 * x)
    assert_allclose(b.empirical, 3.0 + 2.5 * a.empirical, rtol=1e-12)
    assert_allclose(b.tail_ratio, a.tail_ratio, rtol=1e-9)


def test_permutation_invariance(rng):
    x = rng.normal(size=10000)
    y = rng.permutation(x)
    assert_allclose(quantile_compare(y).empirical, quantile_compare(x).empirical)
    assert normality_correlation(y) == normality_correlation(x)


def test_exact_gaussian_scores_correlate():
    assert normality_correlation(gaussian_scores(500)) > 0.9999


def test_heavy_tails_lower_correlation():
    rng = np.random.default_rng(3)
    lower = 0
    for _ in range(100):
        z = rng.normal(size=300)
        lower += normality_correlation(z**3) < normality_correlation(rng.normal(size=300))
    assert lower == 100


def test_uniform_direct_oracle(rng):
    u = rng.uniform(size=10000)
    s = np.sort(u)
    n = len(s)
    m = np.array([stats.norm.ppf((i - 0.375) / (n + 0.25)) for i in range(1, n + 1)])
    num = sum((a - s.mean()) * (b - m.mean()) for a, b in zip(s, m))
    den = math.sqrt(sum((a - s.mean()) ** 2 for a in s) * sum((b - m.mean()) ** 2 for b in m))
    assert normality_correlation(u) == pytest.approx(num / den, abs=1e-12)


def test_normality_needs_ten():
    with pytest.raises(TooFewObservations):
        normality_correlation(np.arange(9.0))
    assert 0.9 < normality_correlation(np.arange(10.0)) <= 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=10, max_size=200).filter(lambda v: np.ptp(v) > 1e-6))
def test_correlation_bounded(values):
    r = normality_correlation(values)
    assert -1.0 <= r <= 1.0
    assert r > 0.0


def test_frame_layout(rng):
    frame = quantile_compare(rng.normal(size=20000)).to_frame()
    assert list(frame.columns) == ["level", "empirical", "gaussian", "tail_ratio"]
    assert np.isnan(frame.loc[frame.level == 0.5, "tail_ratio"]).all()


def test_mirror_levels_supported_alike(rng):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        qc = quantile_compare(rng.normal(size=10000))
    assert tuple(qc.levels) == PROBE_LEVELS
