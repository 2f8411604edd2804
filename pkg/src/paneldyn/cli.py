"""
Command-line entry point: ``paneldyn <command> [options]``.

Commands: ingest, features, fit, analyze-surface, diagnostics, simulate,
report. Every command accepts ``--config FILE`` (flat key=value, keys named
like the long flags) and ``--threads N`` (falls back to PANELDYN_THREADS).
Flags given on the command line override the config file. Failures print a
single ``ErrorClass: message`` line on stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import warnings
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from . import __version__
from .config import RunConfig, load_config_file, parse_range, to_bool
from .diagnostics import normality_correlation, quantile_compare
from .errors import ConfigError, MissingColumn, PanelDynError
from .factor_lab import FeatureMatrix, build_features
from .model_suite import (
    MODEL_CHOICES,
    fit_model_detailed,
    read_reports_csv,
    render_csv,
    render_text,
    run_table2,
)
from .panel_store import load_panel, summarize, write_panel
from .prep import prepare_features
from .surface import cross_section, grid_emit, level_set_roots, reduce_surface, trend_geometry
from .synthgen import (
    CONSTANT_PRICE_OVERRIDES,
    DEFAULT_FEEDBACK,
    SynthConfig,
    generate_feature_panel,
    generate_raw_panel,
)

# destinations holding paths; relative values in a config file resolve
# against the file's directory
PATH_KEYS = {"firms", "macro", "features", "residuals", "from_report", "out"}

DEFAULT_GRID = "-2:2:41,-3:3:61"

# SynthConfig fields exposed as simulate flags
_SYNTH_SKIP = {"beta", "feedback"}


def _g(x) -> str:
    return "%.17g" % x


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _write_frame(path, frame: pd.DataFrame, index: bool = False) -> None:
    frame.to_csv(path, index=index, float_format="%.17g", lineterminator="\n")


def _require(ns, *names):
    for name in names:
        if getattr(ns, name, None) in (None, ""):
            raise ConfigError(f"missing required option --{name.replace('_', '-')}")


def _outdir(ns) -> str:
    _require(ns, "out")
    os.makedirs(ns.out, exist_ok=True)
    return ns.out


# ---------------------------------------------------------------------------
# argument parsing


def _add_factor_flags(p):
    g = p.add_argument_group("features")
    g.add_argument("--val-window", type=int, default=189, help="valuation regression window (days)")
    g.add_argument("--window-includes-t", action="store_true",
                   help="valuation window ends at day t instead of t-1")
    g.add_argument("--significance-alpha", type=float, default=0.10,
                   help="p-value threshold for keeping valuation coefficients")
    g.add_argument("--blend-forecasts", action="store_true",
                   help="blend current and next fiscal year forecasts by day of year")


def _add_prep_flags(p):
    g = p.add_argument_group("preprocessing")
    g.add_argument("--no-winsorize", action="store_true", help="skip winsorizing")
    g.add_argument("--lower-pct", type=float, default=0.01)
    g.add_argument("--upper-pct", type=float, default=0.99)
    g.add_argument("--winsorize-scope", choices=("firm", "pooled"), default="firm")
    g.add_argument("--winsorize-bound", choices=("inner", "interpolated"), default="inner")
    g.add_argument("--no-standardize", action="store_true", help="skip per-firm standardization")


def _add_fit_flags(p):
    g = p.add_argument_group("estimation")
    g.add_argument("--cov", choices=("cluster", "dm3"), default="cluster")
    g.add_argument("--hc-divisor", choices=("paper_plus", "hc3_minus"), default="paper_plus",
                   help="leverage divisor for dm3: (1+h)^2 or (1-h)^2")


def _add_input_flags(p):
    g = p.add_argument_group("inputs")
    g.add_argument("--features", help="feature CSV written by the features command")
    g.add_argument("--firms", help="per-firm daily CSV")
    g.add_argument("--macro", help="macro daily CSV")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: PANELDYN_THREADS or 1)")

    parser = argparse.ArgumentParser(prog="paneldyn", description="Nonlinear panel return models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    subs = {}

    p = sub.add_parser("ingest", parents=[common], help="validate raw CSVs and write canonical copies")
    p.add_argument("--firms")
    p.add_argument("--macro")
    p.add_argument("--out", help="output directory")
    subs["ingest"] = p

    p = sub.add_parser("features", parents=[common], help="compute factor features")
    p.add_argument("--firms")
    p.add_argument("--macro")
    p.add_argument("--out", help="feature CSV path")
    _add_factor_flags(p)
    subs["features"] = p

    p = sub.add_parser("fit", parents=[common], help="fit one fixed-effects model")
    _add_input_flags(p)
    p.add_argument("--model", type=str.upper, choices=MODEL_CHOICES, default="3")
    p.add_argument("--out", help="output directory")
    _add_factor_flags(p)
    _add_prep_flags(p)
    _add_fit_flags(p)
    subs["fit"] = p

    p = sub.add_parser("analyze-surface", parents=[common], help="cubic surface geometry")
    p.add_argument("--from-report", help="report CSV written by fit or report")
    p.add_argument("--model", type=str.upper, default="3", help="model whose cubic terms to use")
    p.add_argument("--alpha", type=float, default=0.10, help="significance threshold for terms")
    p.add_argument("--valuation", type=float, default=0.0, help="valuation for the trend cross-section")
    p.add_argument("--grid", default=DEFAULT_GRID, help="vmin:vmax:steps,tmin:tmax:steps")
    p.add_argument("--level", type=float, default=None, help="return level (raw units) to solve for")
    p.add_argument("--out", help="output directory")
    subs["analyze-surface"] = p

    p = sub.add_parser("diagnostics", parents=[common], help="residual distribution checks")
    p.add_argument("--residuals", help="CSV with a 'residual' column")
    p.add_argument("--sd", type=float, default=None, help="fixed Gaussian reference SD")
    p.add_argument("--levels", default=None, help="comma-separated probe levels")
    p.add_argument("--out", help="output directory")
    subs["diagnostics"] = p

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic panel")
    p.add_argument("--kind", choices=("raw", "features"), default="raw")
    p.add_argument("--out", help="output directory")
    p.add_argument("--constant-prices", action="store_true", help="flat prices and turnover")
    p.add_argument("--with-feedback", action="store_true",
                   help="inject the default cubic trend feedback into raw returns")
    p.add_argument("--beta", default=None,
                   help="implanted slopes for --kind features, e.g. 'trend=7e-4,trend^3=-9e-5'")
    for f in dataclasses.fields(SynthConfig):
        if f.name in _SYNTH_SKIP:
            continue
        kind = type(f.default)
        p.add_argument("--" + f.name.replace("_", "-"), type=kind, default=f.default)
    subs["simulate"] = p

    p = sub.add_parser("report", parents=[common], help="fit all models, surface and diagnostics")
    _add_input_flags(p)
    p.add_argument("--models", default=None, help="comma-separated model ids (default 1V,1T,2,3,4)")
    p.add_argument("--surface-model", default="3")
    p.add_argument("--alpha", type=float, default=0.10)
    p.add_argument("--valuation", type=float, default=0.0)
    p.add_argument("--out", help="output directory")
    _add_factor_flags(p)
    _add_prep_flags(p)
    _add_fit_flags(p)
    subs["report"] = p
    return parser, subs


def _config_defaults(path: str, sub: argparse.ArgumentParser, all_dests) -> Dict[str, object]:
    raw = load_config_file(path)
    base = os.path.dirname(os.path.abspath(path))
    actions = {a.dest: a for a in sub._actions}
    out = {}
    for key, value in raw.items():
        if key == "config":
            raise ConfigError("a config file cannot name another config file")
        if key not in actions:
            if key in all_dests:
                continue  # meant for another command
            raise ConfigError(f"unknown config key {key!r}")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            out[key] = to_bool(value, key)
            continue
        if action.choices is not None:
            conv = action.type(value) if action.type else value
            if conv not in action.choices:
                raise ConfigError(f"{key}: {value!r} not in {', '.join(map(str, action.choices))}")
        if key in PATH_KEYS and value and not os.path.isabs(value):
            value = os.path.join(base, value)
        out[key] = value
    return out


def parse_args(argv: Optional[List[str]] = None):
    parser, subs = build_parser()
    ns = parser.parse_args(argv)
    if ns.config:
        all_dests = {a.dest for p in subs.values() for a in p._actions}
        subs[ns.command].set_defaults(**_config_defaults(ns.config, subs[ns.command], all_dests))
        ns = parser.parse_args(argv)
    return ns


# ---------------------------------------------------------------------------
# commands


def _load_dataset(ns):
    _require(ns, "firms", "macro")
    return load_panel(ns.firms, ns.macro)


def _raw_features(ns, rc: RunConfig) -> FeatureMatrix:
    if getattr(ns, "features", None):
        return FeatureMatrix.read_csv(ns.features)
    if not (getattr(ns, "firms", None) and getattr(ns, "macro", None)):
        raise ConfigError("give --features, or --firms and --macro")
    return build_features(_load_dataset(ns), rc.factor)


def _residual_frame(fm: FeatureMatrix, resid: np.ndarray) -> pd.DataFrame:
    n, t = resid.shape
    return pd.DataFrame({
        "firm": np.repeat(np.array(fm.firms, dtype=object), t),
        "date": np.tile(np.array(fm.dates, dtype=object), n),
        "residual": resid.ravel(),
    })


def cmd_ingest(ns) -> int:
    ds = _load_dataset(ns)
    out = _outdir(ns)
    write_panel(ds, os.path.join(out, "firms.csv"), os.path.join(out, "macro.csv"))
    _write_frame(os.path.join(out, "summary.csv"), summarize(ds).rename_axis("row"), index=True)
    print(f"firms={ds.n_firms} days={ds.n_days} records={ds.n_records}")
    return 0


def cmd_features(ns) -> int:
    rc = RunConfig.from_namespace(ns)
    _require(ns, "out")
    fm = build_features(_load_dataset(ns), rc.factor)
    parent = os.path.dirname(os.path.abspath(ns.out))
    os.makedirs(parent, exist_ok=True)
    fm.write_csv(ns.out)
    print(f"firms={fm.n_firms} rows_per_firm={fm.n_days}")
    return 0


def cmd_fit(ns) -> int:
    rc = RunConfig.from_namespace(ns)
    fm = prepare_features(_raw_features(ns, rc), rc.prep)
    report, fit = fit_model_detailed(ns.model, fm, rc.fit)
    out = _outdir(ns)
    _write_text(os.path.join(out, "report.csv"), render_csv([report]))
    text = render_text([report])
    _write_text(os.path.join(out, "report.txt"), text)
    _write_frame(os.path.join(out, "residuals.csv"), _residual_frame(fm, fit.resid))
    sys.stdout.write(text)
    return 0


def _surface_record(report, alpha, valuation, level=None) -> List[str]:
    surf = reduce_surface(report, alpha)
    lines = [f"model={report.model_id}", f"alpha={_g(alpha)}", f"valuation={_g(valuation)}"]
    for name, coef in surf.coefficients.items():
        lines.append(f"coef.{name}={_g(coef)}")
        lines.append(f"p_value.{name}={_g(surf.p_values[name])}")
    lines.append("zeroed=" + ";".join(surf.zeroed))
    try:
        geom = trend_geometry(surf, valuation)
    except PanelDynError as exc:
        lines.append(f"geometry=unavailable ({type(exc).__name__}: {exc})")
    else:
        for key, value in geom.as_record().items():
            lines.append(f"{key}={_g(value)}")
    if level is not None:
        roots = level_set_roots(surf, valuation, level)
        lines.append(f"level={_g(level)}")
        lines.append("level_roots=" + ";".join(_g(r) for r in roots))
    return lines, surf


def _pick_report(reports, model_id):
    for r in reports:
        if r.model_id == str(model_id).upper():
            return r
    raise ConfigError(f"report has no model {model_id!r}")


def cmd_analyze_surface(ns) -> int:
    _require(ns, "from_report")
    report = _pick_report(read_reports_csv(ns.from_report), ns.model)
    lines, surf = _surface_record(report, ns.alpha, ns.valuation, ns.level)
    # the geometry itself must exist for this command
    trend_geometry(surf, ns.valuation)
    parts = ns.grid.split(",")
    if len(parts) != 2:
        raise ConfigError("--grid needs vmin:vmax:steps,tmin:tmax:steps")
    vlo, vhi, vn = parse_range(parts[0])
    tlo, thi, tn = parse_range(parts[1])
    out = _outdir(ns)
    _write_text(os.path.join(out, "geometry.txt"), "\n".join(lines) + "\n")
    _write_frame(os.path.join(out, "grid.csv"), grid_emit(surf, [(vlo, vhi), (tlo, thi)], [vn, tn]))
    _write_frame(os.path.join(out, "trend_section.csv"),
                 cross_section(surf, "trend", tlo, thi, tn, fixed=ns.valuation))
    _write_frame(os.path.join(out, "valuation_section.csv"),
                 cross_section(surf, "valuation", vlo, vhi, vn, fixed=0.0))
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def _diagnostic_outputs(resid, sd=None, levels=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        qc = quantile_compare(resid, levels=levels, sd=sd)
    text = [f"n={qc.n}", f"mean={_g(qc.mean)}", f"sd={_g(qc.sd)}",
            f"normality_correlation={_g(normality_correlation(resid))}"]
    if qc.dropped:
        text.append("dropped_levels=" + ";".join(_g(q) for q in qc.dropped))
    return qc.to_frame(), text


def cmd_diagnostics(ns) -> int:
    _require(ns, "residuals")
    frame = pd.read_csv(ns.residuals, float_precision="round_trip")
    if "residual" not in frame.columns:
        raise MissingColumn("residual CSV needs a 'residual' column")
    levels = None
    if ns.levels:
        try:
            levels = [float(x) for x in ns.levels.split(",")]
        except ValueError:
            raise ConfigError(f"--levels must be comma-separated numbers, got {ns.levels!r}") from None
    table, text = _diagnostic_outputs(frame["residual"].to_numpy(dtype=float), ns.sd, levels)
    out = _outdir(ns)
    _write_frame(os.path.join(out, "quantiles.csv"), table)
    _write_text(os.path.join(out, "normality.txt"), "\n".join(text) + "\n")
    sys.stdout.write("\n".join(text) + "\n")
    return 0


def _parse_beta(spec: Optional[str]) -> Dict[str, float]:
    if not spec:
        return {}
    out = {}
    for item in spec.split(","):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--beta entries must be term=value, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"--beta value for {key.strip()!r} is not a number") from None
    return out


def cmd_simulate(ns) -> int:
    kwargs = {f.name: getattr(ns, f.name) for f in dataclasses.fields(SynthConfig)
              if f.name not in _SYNTH_SKIP}
    if ns.constant_prices:
        kwargs.update(CONSTANT_PRICE_OVERRIDES)
    try:
        config = SynthConfig(beta=_parse_beta(ns.beta),
                             feedback=DEFAULT_FEEDBACK if ns.with_feedback else None, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = _outdir(ns)
    if ns.kind == "features":
        panel = generate_feature_panel(config)
        panel.features.write_csv(os.path.join(out, "features.csv"))
        print(f"firms={config.n_firms} days={config.n_days} kind=features")
    else:
        ds = generate_raw_panel(config)
        write_panel(ds, os.path.join(out, "firms.csv"), os.path.join(out, "macro.csv"))
        print(f"firms={ds.n_firms} days={ds.n_days} kind=raw")
    return 0


def cmd_report(ns) -> int:
    rc = RunConfig.from_namespace(ns)
    fm = prepare_features(_raw_features(ns, rc), rc.prep)
    reports = run_table2(fm, rc.fit, rc.models)
    out = _outdir(ns)
    text = render_text(reports)
    _write_text(os.path.join(out, "table.txt"), text)
    _write_text(os.path.join(out, "table.csv"), render_csv(reports))

    summary = [text.rstrip("\n"), ""]
    surface_reports = [r for r in reports if r.model_id == rc.surface_model]
    if surface_reports:
        try:
            lines, _ = _surface_record(surface_reports[0], rc.alpha, rc.valuation)
        except PanelDynError as exc:
            lines = [f"surface=unavailable ({type(exc).__name__}: {exc})"]
        _write_text(os.path.join(out, "surface.txt"), "\n".join(lines) + "\n")
        summary += ["[surface]"] + lines + [""]

        _, fit = fit_model_detailed(rc.surface_model, fm, rc.fit)
        table, diag = _diagnostic_outputs(fit.resid.ravel())
        _write_frame(os.path.join(out, "quantiles.csv"), table)
        _write_frame(os.path.join(out, "residuals.csv"), _residual_frame(fm, fit.resid))
        summary += ["[residuals]"] + diag
    _write_text(os.path.join(out, "summary.txt"), "\n".join(summary) + "\n")
    sys.stdout.write(text)
    return 0


HANDLERS = {
    "ingest": cmd_ingest,
    "features": cmd_features,
    "fit": cmd_fit,
    "analyze-surface": cmd_analyze_surface,
    "diagnostics": cmd_diagnostics,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        ns = parse_args(argv)
        return HANDLERS[ns.command](ns)
    except (PanelDynError, ValueError, KeyError, OSError) as exc:
        message = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
        print(f"{type(exc).__name__}: {' '.join(message.split())}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
