"""
Residual distribution checks: empirical against Gaussian quantiles and a
probability-plot correlation with Gaussian order-statistic scores.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import TooFewObservations

PROBE_LEVELS = (0.0001, 0.001, 0.01, 0.10, 0.50, 0.90, 0.99, 0.999, 0.9999)
MIN_NORMALITY_N = 10


@dataclass(frozen=True, eq=False)
class QuantileComparison:
    levels: np.ndarray
    empirical: np.ndarray
    gaussian: np.ndarray
    # Gaussian tail mass beyond the empirical quantile over the nominal tail
    tail_ratio: np.ndarray
    mean: float
    sd: float
    n: int
    dropped: tuple = ()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "level": self.levels,
            "empirical": self.empirical,
            "gaussian": self.gaussian,
            "tail_ratio": self.tail_ratio,
        })


def _supported(level: float, n: int) -> bool:
    # tolerance so 0.9999 is treated like 0.0001 despite rounding in 1 - q
    return n * min(level, 1.0 - level) >= 1.0 - 1e-9


def quantile_compare(residuals, levels: Optional[Sequence[float]] = None,
                     sd: Optional[float] = None, mean: Optional[float] = None) -> QuantileComparison:
    """
    Compare empirical quantiles with those of a Gaussian.

    The reference Gaussian has the sample mean and sample SD unless
    ``mean`` or ``sd`` are given. A level ``q`` needs ``n * min(q, 1-q) >= 1``
    observations; unsupported default levels are dropped with a warning,
    unsupported requested levels raise :class:`TooFewObservations`.

    The tail ratio is ``Phi(x_q) / q`` below the median and
    ``(1 - Phi(x_q)) / (1 - q)`` above it, where ``x_q`` is the empirical
    quantile and ``Phi`` the reference Gaussian CDF; 1 means the sample
    tail matches the Gaussian at that level.
    """
    x = np.asarray(residuals, dtype=float).ravel()
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise TooFewObservations("residuals must be a non-empty finite sample")
    n = x.size
    explicit = levels is not None
    probe = np.asarray(PROBE_LEVELS if levels is None else levels, dtype=float)
    if np.any((probe <= 0) | (probe >= 1)):
        raise ValueError("probe levels must lie strictly between 0 and 1")
    ok = np.array([_supported(q, n) for q in probe])
    dropped = tuple(float(q) for q in probe[~ok])
    if dropped:
        if explicit:
            raise TooFewObservations(
                f"{n} residuals cannot support probe level(s) {', '.join(f'{q:g}' for q in dropped)}"
            )
        warnings.warn(f"dropping probe levels {dropped} unsupported by {n} residuals", stacklevel=2)
        probe = probe[ok]
    mu = float(x.mean()) if mean is None else float(mean)
    if sd is None:
        if n < 2:
            raise TooFewObservations("need two residuals to estimate the SD")
        sd = float(x.std(ddof=1))
    sd = float(sd)
    if not sd > 0:
        raise ValueError("reference SD must be positive")
    emp = np.quantile(x, probe, method="linear")
    gauss = stats.norm.ppf(probe, loc=mu, scale=sd)
    lower = probe < 0.5
    upper = probe > 0.5
    ratio = np.full(probe.shape, np.nan)
    ratio[lower] = stats.norm.cdf(emp[lower], mu, sd) / probe[lower]
    ratio[upper] = stats.norm.sf(emp[upper], mu, sd) / (1.0 - probe[upper])
    return QuantileComparison(probe, emp, gauss, ratio, mu, sd, n, dropped)


def gaussian_scores(n: int) -> np.ndarray:
    """Gaussian quantiles of the plotting positions ``(i - 3/8)/(n + 1/4)``."""
    i = np.arange(1, n + 1, dtype=float)
    return stats.norm.ppf((i - 0.375) / (n + 0.25))


def normality_correlation(residuals) -> float:
    """Pearson correlation of the sorted sample with Gaussian order-statistic scores."""
    x = np.sort(np.asarray(residuals, dtype=float).ravel())
    n = x.size
    if n < MIN_NORMALITY_N:
        raise TooFewObservations(f"normality correlation needs at least {MIN_NORMALITY_N} values, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("residuals must be finite")
    z = gaussian_scores(n)
    xc = x - x.mean()
    zc = z - z.mean()
    denom = np.sqrt((xc @ xc) * (zc @ zc))
    if denom == 0.0:
        raise ValueError("constant residuals have no defined correlation")
    return float(np.clip((xc @ zc) / denom, -1.0, 1.0))


__all__ = [
    "PROBE_LEVELS",
    "QuantileComparison",
    "gaussian_scores",
    "normality_correlation",
    "quantile_compare",
]
