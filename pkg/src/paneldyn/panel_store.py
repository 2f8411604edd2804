"""
Balanced firm-by-day panel: CSV ingestion, validation, canonical output,
relative changes and descriptive statistics.

Two delimited files are read. The firm file carries one row per
(firm, date)::

    date,ticker,adj_close,turnover,eps_fy1[,eps_fy2][,mktcap][,volume]

and the macro file one row per date::

    date,spx,ust10y,gdp_fy1[,gdp_fy2]

Dates are opaque labels ordered lexically (ISO dates sort correctly); no
calendar arithmetic is done except for the optional forecast blend.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DuplicateRecord,
    MissingColumn,
    NonPositivePrice,
    ParseFailure,
    UnbalancedPanel,
    ZeroDenominator,
)

FIRM_REQUIRED = ("date", "ticker", "adj_close", "turnover", "eps_fy1")
FIRM_OPTIONAL = ("eps_fy2", "mktcap", "volume")
MACRO_REQUIRED = ("date", "spx", "ust10y", "gdp_fy1")
MACRO_OPTIONAL = ("gdp_fy2",)

TRADING_DAYS_PER_YEAR = 252

# how many offenders an UnbalancedPanel message spells out
_MAX_LISTED = 10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """
    Balanced panel of per-firm daily records plus shared macro series.

    Firm-level arrays have shape ``(n_firms, n_days)``; macro arrays have
    shape ``(n_days,)``. Arrays are read-only once constructed.
    """

    firms: tuple
    dates: tuple
    adj_close: np.ndarray
    turnover: np.ndarray
    eps_fy1: np.ndarray
    spx: np.ndarray
    ust10y: np.ndarray
    gdp_fy1: np.ndarray
    eps_fy2: Optional[np.ndarray] = None
    gdp_fy2: Optional[np.ndarray] = None
    mktcap: Optional[np.ndarray] = None
    volume: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "firms", tuple(str(f) for f in self.firms))
        object.__setattr__(self, "dates", tuple(str(d) for d in self.dates))
        n, t = len(self.firms), len(self.dates)
        if len(set(self.firms)) != n:
            raise DuplicateRecord("duplicate firm identifiers")
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise UnbalancedPanel("calendar must be strictly increasing")
        for name in ("adj_close", "turnover", "eps_fy1", "eps_fy2", "mktcap", "volume"):
            value = getattr(self, name)
            if value is None:
                continue
            value = _frozen(value)
            if value.shape != (n, t):
                raise UnbalancedPanel(f"{name} has shape {value.shape}, expected {(n, t)}")
            object.__setattr__(self, name, value)
        for name in ("spx", "ust10y", "gdp_fy1", "gdp_fy2"):
            value = getattr(self, name)
            if value is None:
                continue
            value = _frozen(value)
            if value.shape != (t,):
                raise UnbalancedPanel(f"{name} has shape {value.shape}, expected {(t,)}")
            object.__setattr__(self, name, value)
        if not np.all(np.isfinite(self.adj_close)) or np.any(self.adj_close <= 0):
            i, j = np.argwhere(~(self.adj_close > 0))[0]
            raise NonPositivePrice(
                f"adj_close must be positive (firm {self.firms[i]!r}, date {self.dates[j]!r})"
            )
        if np.any(self.turnover < 0):
            i, j = np.argwhere(self.turnover < 0)[0]
            raise ParseFailure(
                f"negative turnover for firm {self.firms[i]!r} on {self.dates[j]!r}"
            )

    @property
    def n_firms(self) -> int:
        return len(self.firms)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_records(self) -> int:
        return self.n_firms * self.n_days

    def select_firms(self, firms: Sequence[str]) -> "PanelDataset":
        idx = [self.firms.index(f) for f in firms]
        kwargs = {"firms": tuple(self.firms[i] for i in idx)}
        for name in ("adj_close", "turnover", "eps_fy1", "eps_fy2", "mktcap", "volume"):
            value = getattr(self, name)
            kwargs[name] = None if value is None else value[idx]
        return replace(self, **kwargs)

    def truncate(self, n_days: int) -> "PanelDataset":
        """Keep only the first ``n_days`` dates."""
        if not 1 <= n_days <= self.n_days:
            raise ValueError(f"n_days must be in [1, {self.n_days}]")
        kwargs = {"dates": self.dates[:n_days]}
        for name in ("adj_close", "turnover", "eps_fy1", "eps_fy2", "mktcap", "volume"):
            value = getattr(self, name)
            kwargs[name] = None if value is None else value[:, :n_days]
        for name in ("spx", "ust10y", "gdp_fy1", "gdp_fy2"):
            value = getattr(self, name)
            kwargs[name] = None if value is None else value[:n_days]
        return replace(self, **kwargs)

    def equals(self, other: "PanelDataset") -> bool:
        if self.firms != other.firms or self.dates != other.dates:
            return False
        for name in ("adj_close", "turnover", "eps_fy1", "eps_fy2", "mktcap", "volume",
                     "spx", "ust10y", "gdp_fy1", "gdp_fy2"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


@dataclass(frozen=True, eq=False)
class RelativeChangeSeries:
    """
    Day-over-day relative changes aligned to ``dates`` (the calendar minus
    its first date, which has no predecessor).
    """

    firms: tuple
    dates: tuple
    stock_return: np.ndarray  # (n_firms, n_days - 1)
    eps_change: np.ndarray  # (n_firms, n_days - 1)
    mkt_return: np.ndarray  # (n_days - 1,)
    int_change: np.ndarray
    gdp_change: np.ndarray


def _read_table(source, required, optional, mapping, label):
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8", newline="") as fh:
            text = fh.read()
    elif hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    else:
        raise TypeError(f"cannot read {label} data from {type(source).__name__}")
    try:
        raw = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False,
                          skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ParseFailure(f"{label} file: {exc}") from None

    out = {}
    for key in required + optional:
        col = mapping.get(key, key)
        if col not in raw.columns:
            if key in required:
                raise MissingColumn(f"{label} file lacks required column {col!r}")
            continue
        out[key] = raw[col].str.strip()
    return out, len(raw)


def _to_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return float("nan")


def _numeric(values: pd.Series, key: str, label: str) -> np.ndarray:
    # float() rounds correctly, so written values read back bit-identical
    parsed = np.array([_to_float(v) for v in values], dtype=float)
    bad = ~np.isfinite(parsed)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        # +2: header occupies line 1 and rows are 1-based
        raise ParseFailure(
            f"{label} column {key!r} has non-numeric value {values.iloc[row]!r}", line=row + 2
        )
    return parsed


def load_panel(firms, macro, schema: Optional[Mapping[str, str]] = None) -> PanelDataset:
    """
    Read and validate a balanced panel.

    Parameters
    ----------
    firms, macro : path or text stream
        Firm-level and macro CSV sources.
    schema : mapping, optional
        Logical column name -> header used in the files, for files whose
        headers differ from the canonical ones.

    Raises
    ------
    ParseFailure, MissingColumn, DuplicateRecord, UnbalancedPanel,
    NonPositivePrice
    """
    mapping = dict(schema or {})
    fcols, n_rows = _read_table(firms, FIRM_REQUIRED, FIRM_OPTIONAL, mapping, "firm")
    if n_rows == 0:
        raise ParseFailure("firm file has no data rows")
    for key in ("date", "ticker"):
        empty = (fcols[key] == "").to_numpy()
        if empty.any():
            raise ParseFailure(f"empty {key}", line=int(np.flatnonzero(empty)[0]) + 2)
    values = {k: _numeric(fcols[k], k, "firm") for k in fcols if k not in ("date", "ticker")}

    keys = pd.DataFrame({"ticker": fcols["ticker"], "date": fcols["date"]})
    dup = keys.duplicated().to_numpy()
    if dup.any():
        row = int(np.flatnonzero(dup)[0])
        raise DuplicateRecord(
            f"line {row + 2}: duplicate record for firm {keys.ticker.iloc[row]!r} "
            f"on {keys.date.iloc[row]!r}"
        )

    firm_ids = sorted(keys.ticker.unique())
    calendar = sorted(keys.date.unique())
    fi = pd.Categorical(keys.ticker, categories=firm_ids).codes
    di = pd.Categorical(keys.date, categories=calendar).codes
    n, t = len(firm_ids), len(calendar)

    present = np.zeros((n, t), dtype=bool)
    present[fi, di] = True
    if not present.all():
        missing = np.argwhere(~present)
        offenders = [(firm_ids[i], calendar[j]) for i, j in missing]
        listed = ", ".join(f"{f}@{d}" for f, d in offenders[:_MAX_LISTED])
        more = "" if len(offenders) <= _MAX_LISTED else f" (+{len(offenders) - _MAX_LISTED} more)"
        raise UnbalancedPanel(f"missing firm-day records: {listed}{more}", offenders)

    arrays = {}
    for key, vals in values.items():
        grid = np.empty((n, t))
        grid[fi, di] = vals
        arrays[key] = grid
    bad_price = np.flatnonzero(values["adj_close"] <= 0)
    if bad_price.size:
        row = int(bad_price[0])
        raise NonPositivePrice(
            f"line {row + 2}: adj_close {values['adj_close'][row]!r} for "
            f"{keys.ticker.iloc[row]!r} on {keys.date.iloc[row]!r}"
        )
    bad_turn = np.flatnonzero(values["turnover"] < 0)
    if bad_turn.size:
        raise ParseFailure("negative turnover", line=int(bad_turn[0]) + 2)

    mcols, m_rows = _read_table(macro, MACRO_REQUIRED, MACRO_OPTIONAL, mapping, "macro")
    mvalues = {k: _numeric(mcols[k], k, "macro") for k in mcols if k != "date"}
    mdates = mcols["date"]
    mdup = mdates.duplicated().to_numpy()
    if mdup.any():
        row = int(np.flatnonzero(mdup)[0])
        raise DuplicateRecord(f"line {row + 2}: duplicate macro date {mdates.iloc[row]!r}")
    pos = pd.Index(mdates).get_indexer(calendar)
    if (pos < 0).any():
        lost = [calendar[j] for j in np.flatnonzero(pos < 0)]
        raise UnbalancedPanel(
            f"macro file lacks {len(lost)} calendar date(s): {', '.join(lost[:_MAX_LISTED])}",
            [("<macro>", d) for d in lost],
        )
    macro_arrays = {k: v[pos] for k, v in mvalues.items()}

    return PanelDataset(
        firms=tuple(firm_ids),
        dates=tuple(calendar),
        adj_close=arrays["adj_close"],
        turnover=arrays["turnover"],
        eps_fy1=arrays["eps_fy1"],
        eps_fy2=arrays.get("eps_fy2"),
        mktcap=arrays.get("mktcap"),
        volume=arrays.get("volume"),
        spx=macro_arrays["spx"],
        ust10y=macro_arrays["ust10y"],
        gdp_fy1=macro_arrays["gdp_fy1"],
        gdp_fy2=macro_arrays.get("gdp_fy2"),
    )


def write_panel(dataset: PanelDataset, firms_path, macro_path) -> None:
    """Write the canonical CSV pair; ``load_panel`` reads it back exactly."""
    n, t = dataset.n_firms, dataset.n_days
    frame = {
        "date": np.tile(np.array(dataset.dates, dtype=object), n),
        "ticker": np.repeat(np.array(dataset.firms, dtype=object), t),
    }
    for key in ("adj_close", "turnover", "eps_fy1") + FIRM_OPTIONAL:
        value = getattr(dataset, key)
        if value is not None:
            frame[key] = value.ravel()
    pd.DataFrame(frame).to_csv(firms_path, index=False, float_format="%.17g", lineterminator="\n")

    mframe = {"date": list(dataset.dates)}
    for key in ("spx", "ust10y", "gdp_fy1", "gdp_fy2"):
        value = getattr(dataset, key)
        if value is not None:
            mframe[key] = value
    pd.DataFrame(mframe).to_csv(macro_path, index=False, float_format="%.17g", lineterminator="\n")


def relative_change(levels: np.ndarray, name: str = "series") -> np.ndarray:
    """``(x[t] - x[t-1]) / x[t-1]`` along the last axis; one element shorter."""
    levels = np.asarray(levels, dtype=float)
    prev = levels[..., :-1]
    if np.any(prev == 0):
        raise ZeroDenominator(f"{name} has a zero value, relative change undefined")
    return (levels[..., 1:] - prev) / prev


def forecast_blend_weights(dates: Sequence[str], year_length: int = TRADING_DAYS_PER_YEAR):
    """
    Weight of the current-year forecast on each date.

    On trading day ``d`` of the year (``d = 0`` on the first business day)
    the weight is ``(year_length - d) / year_length``, floored at zero.
    ``d`` is counted in weekdays since January 1 of the date's year, so
    dates must be ISO ``YYYY-MM-DD``.
    """
    try:
        day = np.array(dates, dtype="datetime64[D]")
    except ValueError as exc:
        raise ParseFailure(f"forecast blending needs ISO dates: {exc}") from None
    start = day.astype("datetime64[Y]").astype("datetime64[D]")
    d = np.busday_count(start, day)
    return np.clip((year_length - d) / year_length, 0.0, 1.0)


def blended_forecasts(dataset: PanelDataset):
    """Return (eps, gdp) level series blended between current and next year."""
    if dataset.eps_fy2 is None:
        raise MissingColumn("forecast blending requires eps_fy2")
    if dataset.gdp_fy2 is None:
        raise MissingColumn("forecast blending requires gdp_fy2")
    w = forecast_blend_weights(dataset.dates)
    eps = w * dataset.eps_fy1 + (1 - w) * dataset.eps_fy2
    gdp = w * dataset.gdp_fy1 + (1 - w) * dataset.gdp_fy2
    return eps, gdp


def compute_returns(dataset: PanelDataset, blend_forecasts: bool = False) -> RelativeChangeSeries:
    """
    Relative day-over-day changes of prices, EPS forecasts, the index, the
    10-year yield and the GDP forecast.
    """
    if dataset.n_days < 2:
        raise ValueError("at least two dates are needed for relative changes")
    if blend_forecasts:
        eps, gdp = blended_forecasts(dataset)
    else:
        eps, gdp = dataset.eps_fy1, dataset.gdp_fy1
    return RelativeChangeSeries(
        firms=dataset.firms,
        dates=dataset.dates[1:],
        stock_return=relative_change(dataset.adj_close, "adj_close"),
        eps_change=relative_change(eps, "eps forecast"),
        mkt_return=relative_change(dataset.spx, "spx"),
        int_change=relative_change(dataset.ust10y, "ust10y"),
        gdp_change=relative_change(gdp, "gdp forecast"),
    )


SUMMARY_ROWS = {
    "dollar_volume": "turnover",
    "share_volume": "volume",
    "market_cap": "mktcap",
}
SUMMARY_COLUMNS = ["mean", "min", "q1", "median", "q3", "max"]


def summarize(dataset: PanelDataset, fields: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Cross-firm distribution of per-firm mean values.

    Each firm's series is averaged over the calendar first; the table then
    reports the mean, minimum, quartiles, median and maximum of those firm
    means. Quantiles interpolate linearly between order statistics.

    Rows whose input column is absent are left out, unless they are named
    explicitly in ``fields``, in which case :class:`MissingColumn` is raised.
    """
    explicit = fields is not None
    fields = list(SUMMARY_ROWS) if fields is None else list(fields)
    rows = {}
    for name in fields:
        if name not in SUMMARY_ROWS:
            raise KeyError(f"unknown summary row {name!r}")
        values = getattr(dataset, SUMMARY_ROWS[name])
        if values is None:
            if explicit:
                raise MissingColumn(f"summary row {name!r} needs column {SUMMARY_ROWS[name]!r}")
            continue
        per_firm = values.mean(axis=1)
        q = np.quantile(per_firm, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
        rows[name] = [per_firm.mean(), q[0], q[1], q[2], q[3], q[4]]
    return pd.DataFrame.from_dict(rows, orient="index", columns=SUMMARY_COLUMNS)
