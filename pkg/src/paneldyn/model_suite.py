"""
Fit the nested cubic return models and render side-by-side reports.

Coefficients and standard errors are printed multiplied by 1000; the
intercept, which combines the constant with the mean firm and day
effects, is printed unscaled.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .factor_lab import TARGET, FeatureMatrix
from .fe_estimator import (
    FTest,
    f_test_no_fixed_effects,
    fit_two_way,
    pooled_ols,
    report_intercept,
)
from .errors import MissingColumn
from .prep import CONTROL_TERMS, CUBIC_TERMS, polynomial_expand

TABLE_MODELS = ("1V", "1T", "2", "3", "4")
MODEL_CHOICES = ("1V", "1T", "2", "2X", "3", "4")
ROW_ORDER = CUBIC_TERMS + CONTROL_TERMS
SCALE = 1000.0
# two-sided critical values for 90/95/99% under the normal approximation
NORMAL_CRITICAL = (1.645, 1.960, 2.576)
MIN_CLUSTERS_FOR_NORMAL = 30

LABELS = {
    "valuation": "Valuation",
    "valuation^2": "Valuation^2",
    "valuation^3": "Valuation^3",
    "trend": "Trend",
    "trend^2": "Trend^2",
    "trend^3": "Trend^3",
    "trend*valuation": "Trend x Valuation",
    "trend^2*valuation": "Trend^2 x Valuation",
    "trend*valuation^2": "Trend x Valuation^2",
    "short_volatility": "Short Term Volatility",
    "long_volatility": "Long Term Volatility",
    "long_term_trend": "Long Term Trend",
    "volume": "Volume",
    "resistance": "Resistance",
}


@dataclass(frozen=True)
class FitOptions:
    cov_type: str = "cluster"  # or "dm3"
    hc_divisor: str = "paper_plus"
    threads: int = 1


@dataclass(frozen=True)
class CoefRow:
    name: str
    coef: float
    se: float
    t: float
    p_value: float
    stars: str


@dataclass(frozen=True)
class RegressionReport:
    model_id: str
    rows: tuple
    intercept: float
    r2: float
    theil_r2: float
    n_obs: int
    n_firms: int
    n_days: int
    f_test: Optional[FTest]
    f_stars: str
    cov_type: str = "cluster"
    scale: float = SCALE

    @property
    def regressors(self) -> tuple:
        return tuple(r.name for r in self.rows)

    def row(self, name: str) -> CoefRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def coefficients(self) -> Dict[str, float]:
        return {r.name: r.coef for r in self.rows}

    def p_values(self) -> Dict[str, float]:
        return {r.name: r.p_value for r in self.rows}


def stars_for(p_value: float) -> str:
    """Stars for significance at the 90, 95 and 99% levels."""
    if not np.isfinite(p_value):
        return ""
    return "*" * sum(p_value < a for a in (0.10, 0.05, 0.01))


def coefficient_p_value(t: float, n_clusters: int) -> float:
    """
    Two-sided p-value, normal for at least 30 clusters and Student t with
    ``n_clusters - 1`` degrees of freedom otherwise.
    """
    if not np.isfinite(t):
        return 0.0 if np.isinf(t) else float("nan")
    if n_clusters >= MIN_CLUSTERS_FOR_NORMAL:
        return float(2.0 * stats.norm.sf(abs(t)))
    return float(2.0 * stats.t.sf(abs(t), max(n_clusters - 1, 1)))


def critical_value(level: float, n_clusters: int) -> float:
    """Two-sided critical |t| matching :func:`coefficient_p_value`."""
    q = 1.0 - (1.0 - level) / 2.0
    if n_clusters >= MIN_CLUSTERS_FOR_NORMAL:
        return float(stats.norm.ppf(q))
    return float(stats.t.ppf(q, max(n_clusters - 1, 1)))


def fit_model(model_id: str, fm: FeatureMatrix, options: FitOptions = FitOptions()) -> RegressionReport:
    """Two-way fixed-effects fit of one model on a prepared feature matrix."""
    return fit_model_detailed(model_id, fm, options)[0]


def fit_model_detailed(model_id: str, fm: FeatureMatrix, options: FitOptions = FitOptions()):
    """Like :func:`fit_model` but also returns the underlying :class:`FEFit`."""
    names, X = polynomial_expand(fm, model_id)
    y = fm[TARGET]
    fit = fit_two_way(y, X, names, cov_type=options.cov_type, hc_divisor=options.hc_divisor)
    if options.cov_type == "cluster":
        ref_clusters = fit.n_firms
    else:
        ref_clusters = fit.n_obs - fit.n_params + 1
    rows = []
    for j, name in enumerate(names):
        coef = float(fit.coef[j])
        se = float(fit.se[j])
        t = coef / se if se > 0 else (np.inf if coef != 0 else np.nan)
        p = coefficient_p_value(t, ref_clusters)
        rows.append(CoefRow(name, coef, se, float(t), p, stars_for(p)))
    f = f_test_no_fixed_effects(pooled_ols(y, X, names), fit)
    report = RegressionReport(
        model_id=str(model_id).upper(),
        rows=tuple(rows),
        intercept=report_intercept(fit.intercept, fit.firm_effects, fit.time_effects),
        r2=fit.r2,
        theil_r2=fit.theil_r2,
        n_obs=fit.n_obs,
        n_firms=fit.n_firms,
        n_days=fit.n_days,
        f_test=f,
        f_stars=stars_for(f.p_value),
        cov_type=options.cov_type,
    )
    return report, fit


def run_table2(fm: FeatureMatrix, options: FitOptions = FitOptions(),
               models: Sequence[str] = TABLE_MODELS) -> List[RegressionReport]:
    """Fit every model in ``models`` on the same prepared features."""
    if options.threads > 1 and len(models) > 1:
        with ThreadPoolExecutor(max_workers=min(options.threads, len(models))) as pool:
            return list(pool.map(lambda m: fit_model(m, fm, options), models))
    return [fit_model(m, fm, options) for m in models]


# rendering

def _fmt(x: float, digits: int = 3) -> str:
    if not np.isfinite(x):
        return "nan" if np.isnan(x) else ("inf" if x > 0 else "-inf")
    s = f"{x:.{digits}f}"
    return "0." + "0" * digits if s == "-0." + "0" * digits else s


def render_text(reports: Sequence[RegressionReport]) -> str:
    """Aligned plain-text table with one column per model."""
    label_w = max(len(v) for v in LABELS.values()) + 2
    col_w = 18
    lines = []
    header = "".ljust(label_w) + "".join(f"Model {r.model_id}".rjust(col_w) for r in reports)
    lines.append(header)
    present = [n for n in ROW_ORDER if any(n in r.regressors for r in reports)]
    extra = [n for r in reports for n in r.regressors if n not in ROW_ORDER]
    for name in present + list(dict.fromkeys(extra)):
        top = LABELS.get(name, name).ljust(label_w)
        bottom = "".ljust(label_w)
        for r in reports:
            if name in r.regressors:
                row = r.row(name)
                top += (_fmt(row.coef * r.scale) + row.stars).rjust(col_w)
                bottom += f"({_fmt(row.se * r.scale)}; {_fmt(row.t, 2)})".rjust(col_w)
            else:
                top += "".rjust(col_w)
                bottom += "".rjust(col_w)
        lines.extend([top, bottom])
    def stat_line(label, values):
        return label.ljust(label_w) + "".join(v.rjust(col_w) for v in values)
    lines.append(stat_line("Intercept", [_fmt(r.intercept, 4) for r in reports]))
    lines.append(stat_line("Theil R-Square", [_fmt(r.theil_r2, 4) for r in reports]))
    lines.append(stat_line("No. Observations", [f"{r.n_obs:,}" for r in reports]))
    lines.append(stat_line("No. Firms", [f"{r.n_firms:,}" for r in reports]))
    lines.append(stat_line("No. Days (per Firm)", [f"{r.n_days:,}" for r in reports]))
    lines.append(stat_line(
        "F Test No Fixed Effects",
        [(_fmt(r.f_test.statistic, 2) + r.f_stars) if r.f_test else "" for r in reports],
    ))
    lines.append("")
    lines.append("Coefficients and standard errors multiplied by 1000; (SE; t) below each coefficient.")
    cov = {r.cov_type for r in reports}
    lines.append("Standard errors: " + ("clustered by firm" if cov == {"cluster"} else ", ".join(sorted(cov))) + ".")
    lines.append("* / ** / *** significant at 90% / 95% / 99%.")
    return "\n".join(lines) + "\n"


CSV_COLUMNS = ("model", "kind", "name", "value", "se", "t", "p_value", "stars")


def _g(x) -> str:
    return "" if x is None else "%.17g" % x


def render_csv(reports: Sequence[RegressionReport]) -> str:
    """Long-format machine-readable report; floats at full precision."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        m = r.model_id
        for row in r.rows:
            w.writerow([m, "coef", row.name, _g(row.coef), _g(row.se), _g(row.t), _g(row.p_value), row.stars])
        w.writerow([m, "stat", "intercept", _g(r.intercept), "", "", "", ""])
        w.writerow([m, "stat", "r2", _g(r.r2), "", "", "", ""])
        w.writerow([m, "stat", "theil_r2", _g(r.theil_r2), "", "", "", ""])
        w.writerow([m, "stat", "n_obs", r.n_obs, "", "", "", ""])
        w.writerow([m, "stat", "n_firms", r.n_firms, "", "", "", ""])
        w.writerow([m, "stat", "n_days", r.n_days, "", "", "", ""])
        if r.f_test is not None:
            w.writerow([m, "stat", "f_no_fixed_effects", _g(r.f_test.statistic), "", "",
                        _g(r.f_test.p_value), r.f_stars])
            w.writerow([m, "stat", "f_dof1", r.f_test.dof[0], "", "", "", ""])
            w.writerow([m, "stat", "f_dof2", r.f_test.dof[1], "", "", "", ""])
        w.writerow([m, "stat", "cov_type", r.cov_type, "", "", "", ""])
    return buf.getvalue()


def _float(s: str) -> float:
    return float(s) if s != "" else float("nan")


def read_reports_csv(source) -> List[RegressionReport]:
    """Parse the output of :func:`render_csv` (path or text) back into reports."""
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source, newline="") as fh:
            text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise MissingColumn(f"report CSV lacks columns: {', '.join(missing)}")
    by_model: Dict[str, dict] = {}
    for rec in reader:
        d = by_model.setdefault(rec["model"], {"rows": [], "stats": {}})
        if rec["kind"] == "coef":
            d["rows"].append(CoefRow(rec["name"], _float(rec["value"]), _float(rec["se"]),
                                     _float(rec["t"]), _float(rec["p_value"]), rec["stars"]))
        else:
            d["stats"][rec["name"]] = rec
    out = []
    for model, d in by_model.items():
        s = d["stats"]
        def val(key, cast=float, default=float("nan")):
            return cast(s[key]["value"]) if key in s else default
        f = None
        if "f_no_fixed_effects" in s:
            f = FTest(val("f_no_fixed_effects"), (val("f_dof1", int, 0), val("f_dof2", int, 0)),
                      _float(s["f_no_fixed_effects"]["p_value"]))
        out.append(RegressionReport(
            model_id=model,
            rows=tuple(d["rows"]),
            intercept=val("intercept"),
            r2=val("r2"),
            theil_r2=val("theil_r2"),
            n_obs=val("n_obs", int, 0),
            n_firms=val("n_firms", int, 0),
            n_days=val("n_days", int, 0),
            f_test=f,
            f_stars=s["f_no_fixed_effects"]["stars"] if f else "",
            cov_type=val("cov_type", str, "cluster"),
        ))
    return out


__all__ = [
    "CoefRow",
    "FitOptions",
    "MODEL_CHOICES",
    "RegressionReport",
    "TABLE_MODELS",
    "coefficient_p_value",
    "critical_value",
    "fit_model",
    "fit_model_detailed",
    "read_reports_csv",
    "render_csv",
    "render_text",
    "run_table2",
    "stars_for",
]
