"""
Technical and valuation factors built from the raw panel.

Every factor at day ``t`` uses data up to and including ``t`` only; the
regression target is the following day's return. Series-level functions
work on a single firm's arrays indexed by trading day (``returns[0]`` is
NaN because the first day has no predecessor). The scalar functions
(:func:`trend`, :func:`volatility`, ...) evaluate the same code on the
tail of a series and exist for direct use and testing.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from .errors import (
    DegenerateValuation,
    InsufficientHistory,
    NonPositiveTurnover,
    ParseFailure,
    UnbalancedPanel,
)
from .panel_store import PanelDataset, compute_returns

VALUATION_TERMS = ("intercept", "eps", "mkt", "int", "gdp")
FEATURE_COLUMNS = (
    "valuation",
    "trend",
    "short_volatility",
    "long_volatility",
    "long_term_trend",
    "volume",
    "resistance",
)
TARGET = "target"

# relative tolerance below which Val is treated as zero
_DEGENERATE_VAL = 1e-9
# relative size below which a fitted contribution counts as roundoff
_EXACT_FIT = 1e-10


def decay_weights(n: int = 10, normalize: bool = True) -> np.ndarray:
    """Weights ``exp(-k)`` for ``k = 1..n``, optionally scaled to sum to one."""
    w = np.exp(-np.arange(1, n + 1, dtype=float))
    return w / math.fsum(w) if normalize else w


def decay_normalizer(n: int = 10) -> float:
    """``sum(exp(-k), k=1..n)``; 0.58195 for ``n = 10``."""
    return math.fsum(decay_weights(n, normalize=False))


@dataclass(frozen=True)
class FactorConfig:
    val_window: int = 189
    window_includes_t: bool = False
    significance_alpha: float = 0.10
    trend_lookback: int = 10
    vol_short: int = 10
    vol_long: int = 251
    ltt_window: int = 251
    resistance_fraction: float = 0.85
    high_window: tuple = (63, 16)  # H = max price over [t-63, t-16]
    dip_window: tuple = (15, 10)  # prices over [t-15, t-10] must sit below the threshold
    blend_forecasts: bool = False
    threads: int = 1

    def __post_init__(self):
        for name in ("val_window", "trend_lookback", "vol_short", "vol_long", "ltt_window"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be at least 2")
        if self.val_window <= len(VALUATION_TERMS):
            raise ValueError("val_window must exceed the number of valuation coefficients")
        if not 0 < self.significance_alpha <= 1:
            raise ValueError("significance_alpha must be in (0, 1]")
        hs, he = self.high_window
        ds, de = self.dip_window
        if not (hs >= he > ds >= de >= 0):
            raise ValueError("resistance windows must satisfy high_start >= high_end > dip_start >= dip_end >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


def feature_burn_in(config: FactorConfig = FactorConfig()):
    """
    Leading and trailing days without a feature row.

    The leading count is the earliest day index at which every lookback is
    fully populated (returns start at day 1); the trailing day is lost to
    the next-day target.
    """
    val_first = config.val_window if config.window_includes_t else config.val_window + 1
    leading = max(
        val_first,
        config.trend_lookback + 1,
        config.vol_short + 1,
        config.vol_long + 1,
        config.ltt_window,
        config.high_window[0],
        config.trend_lookback,
    )
    return leading, 1


# ---------------------------------------------------------------------------
# valuation


@dataclass(frozen=True, eq=False)
class ValuationCoefficients:
    """Rolling valuation regression at one (firm, day)."""

    firm: Optional[str]
    t: int
    window: int
    alpha: np.ndarray  # intercept, eps, mkt, int, gdp
    p_values: np.ndarray
    zeroed: np.ndarray
    dropped: tuple = ()  # regressors constant over the window

    def effective(self) -> np.ndarray:
        """Coefficients with the insignificant ones set to zero."""
        return np.where(self.zeroed, 0.0, self.alpha)


def _window_ols(y, Z, ends, window, alpha):
    """
    OLS of ``y`` on an intercept and ``Z`` for windows ending at ``ends``.

    Regressors that are constant within a window are collinear with the
    intercept; their coefficient is fixed at zero, flagged, and removed
    from the degrees of freedom.
    """
    m = len(ends)
    k = Z.shape[1] + 1
    X = np.column_stack([np.ones(len(y)), Z])
    starts = ends - window + 1

    const = np.zeros((m, k), dtype=bool)
    for j in range(1, k):
        view = sliding_window_view(X[:, j], window)[starts]
        const[:, j] = view.max(axis=1) == view.min(axis=1)

    outer = X[:, :, None] * X[:, None, :]
    xy = X * y[:, None]
    xtx = np.zeros((m, k, k))
    xty = np.zeros((m, k))
    yy = np.zeros(m)
    for s in range(window):
        xtx += outer[starts + s]
        xty += xy[starts + s]
        yy += y[starts + s] ** 2
    col_norm = np.sqrt(np.einsum("mii->mi", xtx))

    rows, cols = np.nonzero(const)
    xtx[rows, cols, :] = 0.0
    xtx[rows, :, cols] = 0.0
    xtx[rows, cols, cols] = 1.0
    xty[rows, cols] = 0.0

    # Jacobi scaling keeps the solve well conditioned across regressor scales
    d = np.sqrt(np.einsum("mii->mi", xtx))
    scaled = xtx / (d[:, :, None] * d[:, None, :])
    coef = np.linalg.solve(scaled, (xty / d)[..., None])[..., 0] / d
    inv_diag = np.einsum("mii->mi", np.linalg.inv(scaled)) / d**2

    rss = np.zeros(m)
    for s in range(window):
        r = y[starts + s] - (X[starts + s] * coef).sum(axis=1)
        rss += r * r

    dof = window - (k - const.sum(axis=1))
    s2 = rss / dof
    se = np.sqrt(s2[:, None] * inv_diag)
    with np.errstate(divide="ignore", invalid="ignore"):
        tval = coef / se
    pval = 2.0 * stats.t.sf(np.abs(tval), dof[:, None])
    # a window fitted exactly (up to roundoff) has no usable t statistics;
    # keep the coefficients whose contribution is above roundoff
    exact = (rss <= (_EXACT_FIT * 1e-2) ** 2 * yy)[:, None] | (se == 0)
    material = np.abs(coef) * col_norm > _EXACT_FIT * np.sqrt(yy)[:, None]
    pval = np.where(exact, np.where(material, 0.0, 1.0), pval)
    pval = np.where(const, 1.0, pval)
    coef = np.where(const, 0.0, coef)
    zeroed = ~(pval < alpha)
    return coef, pval, zeroed, const


def fit_valuation_window(returns, changes, t, window=189, window_includes_t=False,
                         significance_alpha=0.10, firm=None) -> ValuationCoefficients:
    """
    Fit the rolling valuation regression used for day ``t``.

    Parameters
    ----------
    returns : array (n_days,)
        Stock returns by trading day; ``returns[0]`` is undefined.
    changes : array (n_days, 4)
        Relative changes of the EPS forecast, the index, the 10-year yield
        and the GDP forecast, aligned with ``returns``.
    t : int
        Day index the valuation is for.
    window : int
        Number of observations in the fit.
    window_includes_t : bool
        Fit over ``[t - window + 1, t]`` instead of the strictly prior
        ``[t - window, t - 1]``.
    """
    returns = np.asarray(returns, dtype=float)
    changes = np.asarray(changes, dtype=float)
    end = t if window_includes_t else t - 1
    start = end - window + 1
    if start < 0 or end >= len(returns):
        raise InsufficientHistory(f"valuation window [{start}, {end}] is outside the series")
    span = slice(start, end + 1)
    if not (np.all(np.isfinite(returns[span])) and np.all(np.isfinite(changes[span]))):
        raise InsufficientHistory(f"valuation window [{start}, {end}] has undefined values")
    coef, pval, zeroed, const = _window_ols(
        returns, changes, np.array([end]), window, significance_alpha
    )
    dropped = tuple(VALUATION_TERMS[j] for j in np.flatnonzero(const[0]))
    return ValuationCoefficients(firm, t, window, coef[0], pval[0], zeroed[0], dropped)


def project_valuation(coeffs, changes_t, prev_price) -> float:
    """
    Implied value for day ``t``: the fitted return on day ``t`` (insignificant
    coefficients zeroed) applied to the previous close.
    """
    if prev_price <= 0:
        raise ValueError("previous price must be positive")
    a = coeffs.effective() if isinstance(coeffs, ValuationCoefficients) else np.asarray(coeffs, float)
    c = np.asarray(changes_t, dtype=float)
    return float((a[0] + np.dot(a[1:], c) + 1.0) * prev_price)


def valuation_measure(val, price):
    """Relative excess value ``(Val - P) / Val``; positive when undervalued."""
    val = np.asarray(val, dtype=float)
    price = np.asarray(price, dtype=float)
    if np.any(np.abs(val) < _DEGENERATE_VAL * np.abs(price)):
        raise DegenerateValuation("implied value is numerically zero")
    out = (val - price) / val
    return float(out) if out.ndim == 0 else out


def valuation_series(prices, returns, changes, config: FactorConfig = FactorConfig()):
    """
    Valuation for every day with a full fitting window (NaN elsewhere).

    Returns
    -------
    valuation : array (n_days,)
    coefficients : array (n_days, 5)
        Fitted coefficients, NaN where no fit exists.
    zeroed : array (n_days, 5) of bool
    """
    n = len(prices)
    first = config.val_window if config.window_includes_t else config.val_window + 1
    valuation = np.full(n, np.nan)
    coefs = np.full((n, len(VALUATION_TERMS)), np.nan)
    zeroed = np.ones((n, len(VALUATION_TERMS)), dtype=bool)
    if n <= first:
        return valuation, coefs, zeroed
    days = np.arange(first, n)
    ends = days if config.window_includes_t else days - 1
    coef, _, z, _ = _window_ols(returns, changes, ends, config.val_window, config.significance_alpha)
    eff = np.where(z, 0.0, coef)
    fitted = eff[:, 0] + (eff[:, 1:] * changes[days]).sum(axis=1)
    val = (fitted + 1.0) * prices[days - 1]
    valuation[days] = valuation_measure(val, prices[days])
    coefs[days] = coef
    zeroed[days] = z
    return valuation, coefs, zeroed


# ---------------------------------------------------------------------------
# price and volume factors


def _windows(x, length):
    return sliding_window_view(np.asarray(x, dtype=float), length)


def trend_series(returns, lookback=10):
    """Today's return minus the normalized decay-weighted mean of the prior ``lookback``."""
    r = np.asarray(returns, dtype=float)
    out = np.full(len(r), np.nan)
    if len(r) < lookback + 1:
        return out
    w = decay_weights(lookback)[::-1]  # oldest first
    win = _windows(r, lookback + 1)
    out[lookback:] = win[:, -1] - (win[:, :-1] * w).sum(axis=1)
    return out


def volatility_series(returns, X):
    """Standard deviation (divisor ``X``) of the ``X + 1`` returns ending at each day."""
    r = np.asarray(returns, dtype=float)
    out = np.full(len(r), np.nan)
    if len(r) < X + 1:
        return out
    out[X:] = _windows(r, X + 1).std(axis=1, ddof=1)
    return out


def long_term_trend_series(returns, window=251):
    """Least-squares slope of the last ``window`` returns on a day index, times ``window``."""
    r = np.asarray(returns, dtype=float)
    out = np.full(len(r), np.nan)
    if len(r) < window:
        return out
    k = np.arange(1, window + 1, dtype=float)
    kc = k - k.mean()
    out[window - 1:] = (_windows(r, window) * kc).sum(axis=1) / (kc @ kc) * window
    return out


def resistance_series(prices, fraction=0.85, high_window=(63, 16), dip_window=(15, 10)):
    """
    1 where the price is back within ``[fraction * H, H]`` after sitting at or
    below ``fraction * H`` throughout the dip window, ``H`` being the high
    over ``high_window`` (offsets back from ``t``). NaN where undefined.
    """
    p = np.asarray(prices, dtype=float)
    hs, he = high_window
    ds, de = dip_window
    out = np.full(len(p), np.nan)
    if len(p) < hs + 1:
        return out
    win = _windows(p, hs + 1)  # row j covers days j .. j + hs, i.e. t - hs .. t
    high = win[:, : hs - he + 1].max(axis=1)
    dip = win[:, hs - ds: hs - de + 1].max(axis=1)
    now = win[:, -1]
    level = fraction * high
    flag = (dip <= level) & (now >= level) & (now <= high)
    out[hs:] = flag.astype(float)
    return out


def volume_series(turnover, lookback=10):
    """Normalized decay-weighted mean of the last ``lookback`` relative turnover changes."""
    v = np.asarray(turnover, dtype=float)
    out = np.full(len(v), np.nan)
    if len(v) < lookback + 1:
        return out
    with np.errstate(divide="ignore", invalid="ignore"):
        change = np.full(len(v), np.nan)
        change[1:] = (v[1:] - v[:-1]) / v[:-1]
    w = decay_weights(lookback)[::-1]  # weight exp(-1) sits on the newest change
    out[lookback:] = (_windows(change, lookback)[1:] * w).sum(axis=1)
    return out


def _tail(x, n, what):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) < n or not np.all(np.isfinite(x[-n:])):
        raise InsufficientHistory(f"{what} needs {n} defined values ending at t")
    return x[-n:]


def trend(returns, lookback=10) -> float:
    """Trend at the last day of ``returns`` (needs ``lookback + 1`` returns)."""
    return float(trend_series(_tail(returns, lookback + 1, "trend"), lookback)[-1])


def volatility(returns, X=10) -> float:
    return float(volatility_series(_tail(returns, X + 1, "volatility"), X)[-1])


def long_term_trend(returns, window=251) -> float:
    return float(long_term_trend_series(_tail(returns, window, "long term trend"), window)[-1])


def resistance_flag(prices, fraction=0.85, high_window=(63, 16), dip_window=(15, 10)) -> int:
    p = _tail(prices, high_window[0] + 1, "resistance")
    return int(resistance_series(p, fraction, high_window, dip_window)[-1])


def volume_trend(turnover, lookback=10) -> float:
    v = _tail(turnover, lookback + 1, "volume")
    if np.any(v <= 0):
        raise NonPositiveTurnover("turnover must be positive inside the volume window")
    return float(volume_series(v, lookback)[-1])


# ---------------------------------------------------------------------------
# feature matrix


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """
    Balanced per-(firm, day) factor values.

    ``columns`` maps a column name to an array of shape ``(n_firms, n_days)``;
    the target column holds the next day's return.
    """

    firms: tuple
    dates: tuple
    columns: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "firms", tuple(self.firms))
        object.__setattr__(self, "dates", tuple(self.dates))
        shape = (len(self.firms), len(self.dates))
        cols = {}
        for name, value in self.columns.items():
            value = np.array(value, dtype=float)
            if value.shape != shape:
                raise UnbalancedPanel(f"column {name!r} has shape {value.shape}, expected {shape}")
            value.setflags(write=False)
            cols[name] = value
        object.__setattr__(self, "columns", cols)

    def __getitem__(self, name) -> np.ndarray:
        return self.columns[name]

    def __contains__(self, name) -> bool:
        return name in self.columns

    @property
    def n_firms(self) -> int:
        return len(self.firms)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_obs(self) -> int:
        return self.n_firms * self.n_days

    def with_columns(self, **updates) -> "FeatureMatrix":
        cols = dict(self.columns)
        cols.update(updates)
        return FeatureMatrix(self.firms, self.dates, cols)

    def select_firms(self, order) -> "FeatureMatrix":
        idx = [self.firms.index(f) for f in order]
        return FeatureMatrix(tuple(order), self.dates, {k: v[idx] for k, v in self.columns.items()})

    def to_frame(self) -> pd.DataFrame:
        n, t = self.n_firms, self.n_days
        data = {
            "firm": np.repeat(np.array(self.firms, dtype=object), t),
            "date": np.tile(np.array(self.dates, dtype=object), n),
        }
        for name, value in self.columns.items():
            data[name] = value.ravel()
        return pd.DataFrame(data)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "FeatureMatrix":
        if not {"firm", "date"} <= set(frame.columns):
            raise ParseFailure("feature table needs 'firm' and 'date' columns")
        firms = list(dict.fromkeys(frame["firm"].astype(str)))
        dates = sorted(set(frame["date"].astype(str)))
        if len(frame) != len(firms) * len(dates):
            raise UnbalancedPanel("feature table is not a balanced firm x date grid")
        fi = pd.Categorical(frame["firm"].astype(str), categories=firms).codes
        di = pd.Categorical(frame["date"].astype(str), categories=dates).codes
        seen = np.zeros((len(firms), len(dates)), dtype=bool)
        seen[fi, di] = True
        if not seen.all():
            raise UnbalancedPanel("feature table is not a balanced firm x date grid")
        cols = {}
        for name in frame.columns:
            if name in ("firm", "date"):
                continue
            grid = np.empty((len(firms), len(dates)))
            grid[fi, di] = frame[name].to_numpy(dtype=float)
            cols[name] = grid
        return cls(tuple(firms), tuple(dates), cols)

    def write_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    @classmethod
    def read_csv(cls, path) -> "FeatureMatrix":
        return cls.from_frame(
            pd.read_csv(path, dtype={"firm": str, "date": str}, float_precision="round_trip")
        )


def _firm_features(prices, turnover, returns, changes, rows, config):
    lb = config.trend_lookback
    lo, hi = rows[0], rows[-1]
    window_turnover = turnover[lo - lb: hi + 1]
    if np.any(window_turnover <= 0):
        raise NonPositiveTurnover("turnover must be positive inside every volume window")
    valuation, _, _ = valuation_series(prices, returns, changes, config)
    out = {
        "valuation": valuation,
        "trend": trend_series(returns, lb),
        "short_volatility": volatility_series(returns, config.vol_short),
        "long_volatility": volatility_series(returns, config.vol_long),
        "long_term_trend": long_term_trend_series(returns, config.ltt_window),
        "volume": volume_series(turnover, lb),
        "resistance": resistance_series(
            prices, config.resistance_fraction, config.high_window, config.dip_window
        ),
    }
    target = np.full(len(prices), np.nan)
    target[:-1] = returns[1:]
    out[TARGET] = target
    return {k: v[rows] for k, v in out.items()}


def build_features(dataset: PanelDataset, config: FactorConfig = FactorConfig()) -> FeatureMatrix:
    """
    Compute every factor plus the next-day return target.

    One row is produced per (firm, day) where all lookbacks are populated
    and the next day exists; see :func:`feature_burn_in`. Firms are
    independent and are processed on ``config.threads`` workers; results
    do not depend on the worker count.
    """
    leading, trailing = feature_burn_in(config)
    n_days = dataset.n_days
    if n_days - leading - trailing < 1:
        raise InsufficientHistory(
            f"{n_days} days leave no feature rows (need more than {leading + trailing})"
        )
    rel = compute_returns(dataset, blend_forecasts=config.blend_forecasts)
    pad = np.full((dataset.n_firms, 1), np.nan)
    returns = np.hstack([pad, rel.stock_return])
    eps = np.hstack([pad, rel.eps_change])
    macro = np.vstack([
        np.concatenate([[np.nan], rel.mkt_return]),
        np.concatenate([[np.nan], rel.int_change]),
        np.concatenate([[np.nan], rel.gdp_change]),
    ]).T
    rows = np.arange(leading, n_days - trailing)

    def work(i):
        changes = np.column_stack([eps[i], macro])
        return _firm_features(
            dataset.adj_close[i], dataset.turnover[i], returns[i], changes, rows, config
        )

    if config.threads > 1 and dataset.n_firms > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            per_firm = list(pool.map(work, range(dataset.n_firms)))
    else:
        per_firm = [work(i) for i in range(dataset.n_firms)]

    names = FEATURE_COLUMNS + (TARGET,)
    columns = {name: np.vstack([f[name] for f in per_firm]) for name in names}
    for name in names:
        if name != "resistance" and not np.all(np.isfinite(columns[name])):
            raise InsufficientHistory(f"feature {name!r} has undefined values in the sample")
    return FeatureMatrix(dataset.firms, tuple(dataset.dates[r] for r in rows), columns)
