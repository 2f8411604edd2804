"""
Winsorizing, per-firm standardization and polynomial design expansion.

The regression target is never transformed. The binary resistance flag is
exempt from both winsorizing and standardization by default.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import UnknownModel, ZeroVariance
from .factor_lab import FEATURE_COLUMNS, TARGET, FeatureMatrix

CUBIC_TERMS = (
    "valuation",
    "valuation^2",
    "valuation^3",
    "trend",
    "trend^2",
    "trend^3",
    "trend*valuation",
    "trend^2*valuation",
    "trend*valuation^2",
)
CONTROL_TERMS = ("short_volatility", "long_volatility", "long_term_trend", "volume", "resistance")

MODEL_TERMS = {
    "1V": ("valuation",),
    "1T": ("trend",),
    "2": ("valuation", "trend"),
    "2X": ("valuation", "trend", "trend*valuation"),
    "3": CUBIC_TERMS,
    "4": CUBIC_TERMS + CONTROL_TERMS,
}


@dataclass(frozen=True)
class PrepConfig:
    winsorize_enabled: bool = True
    lower_pct: float = 0.01
    upper_pct: float = 0.99
    winsorize_scope: str = "firm"  # or "pooled"
    winsorize_bound: str = "inner"  # or "interpolated"
    standardize_enabled: bool = True
    resistance_exempt: bool = True

    def __post_init__(self):
        if not 0 <= self.lower_pct < self.upper_pct <= 1:
            raise ValueError("need 0 <= lower_pct < upper_pct <= 1")
        if self.winsorize_scope not in ("firm", "pooled"):
            raise ValueError("winsorize_scope must be 'firm' or 'pooled'")
        if self.winsorize_bound not in ("inner", "interpolated"):
            raise ValueError("winsorize_bound must be 'inner' or 'interpolated'")


def winsorize_bounds(values, lower_pct=0.01, upper_pct=0.99, bound="inner"):
    """
    Clipping limits for a column.

    The percentiles are interpolated linearly between order statistics.
    With ``bound="inner"`` each limit is then moved inward to the nearest
    observation inside the percentile interval, so extreme values are
    replaced by the last data points within it; this makes winsorizing
    idempotent. When no observation lies inside the interval (very short
    columns) the nearest observations outside it are used instead.
    ``bound="interpolated"`` uses the percentile values as is.
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("cannot winsorize an empty column")
    lo, hi = np.quantile(x, [lower_pct, upper_pct], method="linear")
    if bound == "interpolated":
        return lo, hi
    s = np.sort(x)
    inner_lo = s[np.searchsorted(s, lo, side="left")]
    inner_hi = s[np.searchsorted(s, hi, side="right") - 1]
    if inner_lo <= inner_hi:
        return inner_lo, inner_hi
    return s[np.searchsorted(s, lo, side="right") - 1], s[np.searchsorted(s, hi, side="left")]


def winsorize(values, lower_pct=0.01, upper_pct=0.99, bound="inner") -> np.ndarray:
    """Clip a column to its percentile limits (see :func:`winsorize_bounds`)."""
    x = np.asarray(values, dtype=float)
    lo, hi = winsorize_bounds(x, lower_pct, upper_pct, bound)
    return np.clip(x, lo, hi)


def _feature_columns(fm: FeatureMatrix, exempt):
    return [c for c in fm.columns if c != TARGET and c not in exempt]


def winsorize_features(fm: FeatureMatrix, config: PrepConfig = PrepConfig()) -> FeatureMatrix:
    exempt = ("resistance",) if config.resistance_exempt else ()
    updates = {}
    for name in _feature_columns(fm, exempt):
        x = fm[name]
        if config.winsorize_scope == "pooled":
            lo, hi = winsorize_bounds(x.ravel(), config.lower_pct, config.upper_pct,
                                      config.winsorize_bound)
            updates[name] = np.clip(x, lo, hi)
        else:
            updates[name] = np.vstack([
                winsorize(row, config.lower_pct, config.upper_pct, config.winsorize_bound)
                for row in x
            ])
    return fm.with_columns(**updates)


def standardize_by_firm(fm: FeatureMatrix, exempt: Sequence[str] = ("resistance",)) -> FeatureMatrix:
    """
    Subtract each firm's mean and divide by its sample standard deviation,
    feature by feature. Statistics use the firm's full sample.
    """
    updates = {}
    for name in _feature_columns(fm, exempt):
        x = fm[name]
        mean = x.mean(axis=1, keepdims=True)
        sd = x.std(axis=1, ddof=1, keepdims=True)
        scale = np.abs(x).max(axis=1, keepdims=True)
        bad = ~(sd > 1e-14 * scale) | ~np.isfinite(sd)
        if bad.any():
            raise ZeroVariance(fm.firms[int(np.flatnonzero(bad.ravel())[0])], name)
        updates[name] = (x - mean) / sd
    return fm.with_columns(**updates)


def prepare_features(fm: FeatureMatrix, config: PrepConfig = PrepConfig()) -> FeatureMatrix:
    """Winsorize (if enabled), then standardize by firm (if enabled)."""
    if config.winsorize_enabled:
        fm = winsorize_features(fm, config)
    if config.standardize_enabled:
        exempt = ("resistance",) if config.resistance_exempt else ()
        fm = standardize_by_firm(fm, exempt)
    return fm


def _term_value(fm: FeatureMatrix, term: str) -> np.ndarray:
    out = None
    for factor in term.split("*"):
        base, _, power = factor.partition("^")
        if base not in fm:
            raise KeyError(f"feature matrix lacks column {base!r}")
        v = fm[base] ** int(power) if power else fm[base]
        out = v if out is None else out * v
    return out


def model_terms(model_id: str) -> tuple:
    try:
        return MODEL_TERMS[str(model_id).upper()]
    except KeyError:
        raise UnknownModel(
            f"unknown model {model_id!r}; choose from {', '.join(MODEL_TERMS)}"
        ) from None


def polynomial_expand(fm: FeatureMatrix, model_id: str):
    """
    Regressors for a model as ``(names, X)`` with ``X`` of shape
    ``(n_firms, n_days, k)``. Powers and cross products are taken of the
    prepared base columns and are not re-standardized.
    """
    names = model_terms(model_id)
    X = np.stack([_term_value(fm, term) for term in names], axis=-1)
    return names, X


def design_frame(fm: FeatureMatrix, model_id: str) -> pd.DataFrame:
    """Long-format design: firm, date, target, then the model's regressors in order."""
    names, X = polynomial_expand(fm, model_id)
    n, t = fm.n_firms, fm.n_days
    data = {
        "firm": np.repeat(np.array(fm.firms, dtype=object), t),
        "date": np.tile(np.array(fm.dates, dtype=object), n),
        TARGET: fm[TARGET].ravel(),
    }
    for j, name in enumerate(names):
        data[name] = X[..., j].ravel()
    return pd.DataFrame(data)


__all__ = [
    "CUBIC_TERMS",
    "CONTROL_TERMS",
    "FEATURE_COLUMNS",
    "MODEL_TERMS",
    "PrepConfig",
    "design_frame",
    "model_terms",
    "polynomial_expand",
    "prepare_features",
    "standardize_by_firm",
    "winsorize",
    "winsorize_bounds",
    "winsorize_features",
]
