"""
Synthetic panels with known ground truth, and a dummy-variable oracle for
the fixed-effects estimator.

Randomness is counter based: every (seed, stream, firm) triple gets its own
generator from a :class:`numpy.random.SeedSequence`, so a firm's draws do
not depend on how many firms exist or in which order they are generated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .factor_lab import FEATURE_COLUMNS, TARGET, FeatureMatrix, decay_weights
from .fe_estimator import ols_fit
from .panel_store import PanelDataset
from .prep import CONTROL_TERMS, CUBIC_TERMS, _term_value

# stream identifiers for the counter-based generator
_S_FEATURES, _S_FIRM_FX, _S_DAY_FX, _S_NOISE = 1, 2, 3, 4
_S_MARKET, _S_PRICE, _S_BETA, _S_TURNOVER, _S_EPS, _S_YIELD, _S_GDP, _S_LEVELS = range(10, 18)

# reduced cubic surface used for optional price feedback (raw units)
DEFAULT_FEEDBACK = {
    "valuation": 0.615e-3,
    "valuation^2": 0.112e-3,
    "trend": 0.721e-3,
    "trend^3": -0.090e-3,
    "trend*valuation^2": 0.151e-3,
}

CONSTANT_PRICE_OVERRIDES = dict(
    drift=0.0, vol=0.0, market_drift=0.0, market_vol=0.0, beta_sd=0.0,
    turnover_vol=0.0, revision_prob=0.0, yield_vol=0.0,
)

MAX_ORACLE_FIRMS = 10
MAX_ORACLE_DAYS = 12


def rng_for(seed: int, stream: int, firm: int = -1) -> np.random.Generator:
    """Generator keyed by (seed, stream, firm); firm -1 denotes shared series."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(firm) + 1]))


def tickers(n: Optional[int] = None, balanced_only: bool = False) -> Tuple[str, ...]:
    """
    Firm identifiers: the bundled large-cap ticker list first, then
    ``F0098``-style fillers if more are requested.
    """
    with resources.files(__package__).joinpath("data/firms.csv").open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    names = [r["ticker"] for r in rows if not balanced_only or r["balanced"] == "1"]
    if n is None:
        return tuple(names)
    out = names[:n]
    k = len(names)
    while len(out) < n:
        k += 1
        out.append(f"F{k:04d}")
    return tuple(out)


def business_dates(n_days: int, start: str = "2005-01-03") -> Tuple[str, ...]:
    return tuple(pd.bdate_range(start=start, periods=n_days).strftime("%Y-%m-%d"))


@dataclass(frozen=True)
class SynthConfig:
    n_firms: int = 20
    n_days: int = 500
    seed: int = 0
    # feature panel
    beta: Mapping[str, float] = field(default_factory=dict)
    firm_effect_sd: float = 0.0005
    time_effect_sd: float = 0.01
    noise_sd: float = 0.001
    resistance_rate: float = 0.05
    # raw price panel
    drift: float = 0.0003
    vol: float = 0.015
    market_drift: float = 0.0003
    market_vol: float = 0.01
    beta_sd: float = 0.3
    start_price: float = 50.0
    turnover_level: float = 0.008
    turnover_vol: float = 0.3
    revision_prob: float = 0.27
    eps_revision_sd: float = 0.02
    earnings_yield: float = 0.06
    yield_level: float = 0.04
    yield_vol: float = 0.01
    gdp_level: float = 2.5
    gdp_revision_sd: float = 0.02
    feedback: Optional[Mapping[str, float]] = None
    start_date: str = "2005-01-03"

    def __post_init__(self):
        if self.n_firms < 1 or self.n_days < 1:
            raise ValueError("n_firms and n_days must be positive")
        for name in ("firm_effect_sd", "time_effect_sd", "noise_sd", "vol", "market_vol",
                     "beta_sd", "turnover_vol", "eps_revision_sd", "yield_vol", "gdp_revision_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("start_price", "turnover_level", "earnings_yield", "yield_level", "gdp_level"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.revision_prob <= 1:
            raise ValueError("revision_prob must be in [0, 1]")
        if not 0 <= self.resistance_rate <= 1:
            raise ValueError("resistance_rate must be in [0, 1]")
        allowed = set(CUBIC_TERMS) | set(CONTROL_TERMS)
        for source in (self.beta, self.feedback or {}):
            unknown = set(source) - allowed
            if unknown:
                raise ValueError(f"unknown regressor terms: {', '.join(sorted(unknown))}")
        object.__setattr__(self, "beta", dict(self.beta))
        if self.feedback is not None:
            object.__setattr__(self, "feedback", dict(self.feedback))

    @classmethod
    def constant_prices(cls, n_firms: int, n_days: int, seed: int = 0) -> "SynthConfig":
        """Flat prices, flat turnover, no forecast revisions."""
        return cls(n_firms=n_firms, n_days=n_days, seed=seed, **CONSTANT_PRICE_OVERRIDES)


@dataclass(frozen=True, eq=False)
class SynthTruth:
    beta: Dict[str, float]
    firm_effects: np.ndarray
    time_effects: np.ndarray
    noise: np.ndarray


@dataclass(frozen=True, eq=False)
class SyntheticFeatures:
    features: FeatureMatrix
    truth: SynthTruth


def _standardized(x: np.ndarray) -> np.ndarray:
    x = x - x.mean()
    sd = x.std(ddof=1)
    return x / sd if sd > 0 else x


def generate_feature_panel(config: SynthConfig) -> SyntheticFeatures:
    """
    Regressors drawn standardized per firm and a target
    ``X beta + mu_i + gamma_t + eps`` built from the configured slopes.
    """
    n, t = config.n_firms, config.n_days
    if t < 3:
        raise ValueError("need at least three days to standardize regressors")
    cols = {}
    for j, name in enumerate(FEATURE_COLUMNS):
        grid = np.empty((n, t))
        for i in range(n):
            g = rng_for(config.seed, _S_FEATURES * 1000 + j, i)
            if name == "resistance":
                grid[i] = (g.random(t) < config.resistance_rate).astype(float)
            else:
                grid[i] = _standardized(g.standard_normal(t))
        cols[name] = grid
    mu = np.array([rng_for(config.seed, _S_FIRM_FX, i).normal(0.0, config.firm_effect_sd)
                   for i in range(n)])
    gamma = rng_for(config.seed, _S_DAY_FX).normal(0.0, config.time_effect_sd, t)
    eps = np.vstack([rng_for(config.seed, _S_NOISE, i).normal(0.0, config.noise_sd, t)
                     for i in range(n)])
    base = FeatureMatrix(tickers(n), business_dates(t, config.start_date), cols)
    y = mu[:, None] + gamma[None, :] + eps
    for term, b in config.beta.items():
        y = y + b * _term_value(base, term)
    cols[TARGET] = y
    order = _label_order(n)
    cols = {k: v[order] for k, v in cols.items()}
    fm = FeatureMatrix(tuple(base.firms[i] for i in order), base.dates, cols)
    return SyntheticFeatures(fm, SynthTruth(dict(config.beta), mu[order], gamma, eps[order]))


def _label_order(n: int) -> np.ndarray:
    """Row order that sorts firms by ticker; draws stay keyed by list position."""
    return np.argsort(np.array(tickers(n)), kind="stable")


def _trend_sd(vol: float, lookback: int = 10) -> float:
    w = decay_weights(lookback)
    return vol * math.sqrt(1.0 + float(w @ w))


def generate_raw_panel(config: SynthConfig) -> PanelDataset:
    """
    Raw prices, turnover, forecasts and macro series.

    Prices follow a geometric random walk with a firm beta on a market
    index. Forecasts are revised on a random subset of days with
    probability ``revision_prob``. With ``feedback`` set, each day's return
    also receives the cubic surface evaluated at the standardized
    deviation of the previous return from its decay-weighted trend.
    """
    n, t = config.n_firms, config.n_days
    seed = config.seed
    gm = rng_for(seed, _S_MARKET)
    mkt = config.market_drift + config.market_vol * gm.standard_normal(t)
    mkt[0] = 0.0
    spx = 1000.0 * np.cumprod(1.0 + mkt)

    gy = rng_for(seed, _S_YIELD)
    ust = config.yield_level * np.exp(np.cumsum(config.yield_vol * gy.standard_normal(t)))

    gg = rng_for(seed, _S_GDP)
    gdp_revise = gg.random(t) < config.revision_prob
    gdp_revise[0] = False
    gdp = config.gdp_level * np.exp(np.cumsum(np.where(
        gdp_revise, config.gdp_revision_sd * gg.standard_normal(t), 0.0)))

    ret = np.empty((n, t))
    for i in range(n):
        gp = rng_for(seed, _S_PRICE, i)
        b = 1.0 + config.beta_sd * rng_for(seed, _S_BETA, i).standard_normal()
        ret[i] = config.drift + b * (mkt - config.market_drift) + config.vol * gp.standard_normal(t)
    ret[:, 0] = 0.0

    if config.feedback:
        from .surface import CubicSurface, evaluate

        surf = CubicSurface(config.feedback)
        w = decay_weights(10)
        scale = _trend_sd(max(config.vol, 1e-12))
        for d in range(12, t):
            dev = ret[:, d - 1] - ret[:, d - 11: d - 1][:, ::-1] @ w
            ret[:, d] += evaluate(surf, 0.0, np.clip(dev / scale, -4.0, 4.0))
    ret = np.clip(ret, -0.5, 0.5)
    start = np.array([config.start_price * math.exp(0.3 * rng_for(seed, _S_LEVELS, i).standard_normal())
                      for i in range(n)])
    prices = start[:, None] * np.cumprod(1.0 + ret, axis=1)

    turnover = np.empty((n, t))
    eps = np.empty((n, t))
    for i in range(n):
        gt = rng_for(seed, _S_TURNOVER, i)
        turnover[i] = config.turnover_level * np.exp(config.turnover_vol * gt.standard_normal(t))
        ge = rng_for(seed, _S_EPS, i)
        revise = ge.random(t) < config.revision_prob
        revise[0] = False
        step = np.where(revise, config.eps_revision_sd * ge.standard_normal(t), 0.0)
        eps[i] = config.earnings_yield * start[i] * np.exp(np.cumsum(step))

    order = _label_order(n)
    prices, turnover, eps = prices[order], turnover[order], eps[order]
    mktcap = prices * 1e8
    return PanelDataset(
        firms=tuple(sorted(tickers(n))),
        dates=business_dates(t, config.start_date),
        adj_close=prices,
        turnover=turnover,
        eps_fy1=eps,
        spx=spx,
        ust10y=ust,
        gdp_fy1=gdp,
        mktcap=mktcap,
        volume=turnover * mktcap / prices,
    )


@dataclass(frozen=True, eq=False)
class LSDVResult:
    slopes: np.ndarray
    # coefficients on one indicator per firm
    firm_coefs: np.ndarray
    # coefficients on indicators for days 2..T (day 1 is the base)
    day_coefs: np.ndarray


def oracle_lsdv(fm: FeatureMatrix, regressors: Sequence[str]) -> LSDVResult:
    """
    Least squares with explicit firm and day indicator columns.

    Only meant for small panels (at most 10 firms by 12 days).
    """
    n, t = fm.n_firms, fm.n_days
    if n > MAX_ORACLE_FIRMS or t > MAX_ORACLE_DAYS:
        raise ValueError(
            f"oracle limited to {MAX_ORACLE_FIRMS} firms x {MAX_ORACLE_DAYS} days, got {n} x {t}"
        )
    X = np.column_stack([_term_value(fm, r).ravel() for r in regressors]) if regressors else np.empty((n * t, 0))
    firm_d = np.kron(np.eye(n), np.ones((t, 1)))
    day_d = np.kron(np.ones((n, 1)), np.eye(t))[:, 1:]
    design = np.hstack([X, firm_d, day_d])
    fit = ols_fit(design, fm[TARGET].ravel())
    k = len(regressors)
    return LSDVResult(fit.coef[:k], fit.coef[k:k + n], fit.coef[k + n:])


def feature_matrix_from_arrays(y, X, names: Sequence[str], firms=None, dates=None) -> FeatureMatrix:
    """Wrap ``(n, t)`` target and ``(n, t, k)`` regressors in a FeatureMatrix."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float).reshape(y.shape + (-1,))
    n, t = y.shape
    firms = tuple(firms) if firms is not None else tuple(f"F{i:03d}" for i in range(n))
    dates = tuple(dates) if dates is not None else tuple(f"D{j:05d}" for j in range(t))
    cols = {name: X[..., j] for j, name in enumerate(names)}
    cols[TARGET] = y
    return FeatureMatrix(firms, dates, cols)


__all__ = [
    "CONSTANT_PRICE_OVERRIDES",
    "DEFAULT_FEEDBACK",
    "LSDVResult",
    "SynthConfig",
    "SynthTruth",
    "SyntheticFeatures",
    "business_dates",
    "feature_matrix_from_arrays",
    "generate_feature_panel",
    "generate_raw_panel",
    "oracle_lsdv",
    "rng_for",
    "tickers",
]
