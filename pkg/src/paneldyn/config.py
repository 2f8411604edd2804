"""
Flat ``key = value`` run configuration.

Keys mirror the long command-line flags (dashes or underscores both
accepted); ``#`` starts a comment. Command-line flags take precedence
over file values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from .errors import ConfigError
from .factor_lab import FactorConfig
from .model_suite import TABLE_MODELS, FitOptions
from .prep import PrepConfig

THREADS_ENV = "PANELDYN_THREADS"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def normalize_key(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


def parse_config_text(text: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = normalize_key(key)
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_config_file(path) -> Dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None


def to_bool(value, key: str = "value") -> bool:
    if isinstance(value, bool):
        return value
    s = str(value).strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def resolve_threads(value: Optional[int]) -> int:
    """Explicit value, else the environment variable, else 1."""
    if value is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        if not env:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if int(value) < 1:
        raise ConfigError("threads must be at least 1")
    return int(value)


def parse_range(spec: str) -> Tuple[float, float, int]:
    """``lo:hi:steps`` into ``(lo, hi, steps)``."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"range {spec!r} must look like lo:hi:steps")
    try:
        return float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"range {spec!r} must look like lo:hi:steps") from None


@dataclass(frozen=True)
class RunConfig:
    """Options shared by the pipeline commands."""

    factor: FactorConfig = field(default_factory=FactorConfig)
    prep: PrepConfig = field(default_factory=PrepConfig)
    fit: FitOptions = field(default_factory=FitOptions)
    models: Tuple[str, ...] = TABLE_MODELS
    surface_model: str = "3"
    alpha: float = 0.10
    valuation: float = 0.0
    threads: int = 1

    @classmethod
    def from_namespace(cls, ns) -> "RunConfig":
        threads = resolve_threads(getattr(ns, "threads", None))
        get = lambda name, default: getattr(ns, name, default)  # noqa: E731
        try:
            factor = FactorConfig(
                val_window=get("val_window", 189),
                window_includes_t=get("window_includes_t", False),
                significance_alpha=get("significance_alpha", 0.10),
                blend_forecasts=get("blend_forecasts", False),
                threads=threads,
            )
            prep = PrepConfig(
                winsorize_enabled=not get("no_winsorize", False),
                lower_pct=get("lower_pct", 0.01),
                upper_pct=get("upper_pct", 0.99),
                winsorize_scope=get("winsorize_scope", "firm"),
                winsorize_bound=get("winsorize_bound", "inner"),
                standardize_enabled=not get("no_standardize", False),
            )
            fit = FitOptions(
                cov_type=get("cov", "cluster"),
                hc_divisor=get("hc_divisor", "paper_plus"),
                threads=threads,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        models = get("models", None)
        models = tuple(m.strip().upper() for m in models.split(",")) if models else TABLE_MODELS
        return cls(factor, prep, fit, models, str(get("surface_model", "3")).upper(),
                   get("alpha", 0.10), get("valuation", 0.0), threads)


__all__ = [
    "THREADS_ENV",
    "RunConfig",
    "load_config_file",
    "parse_config_text",
    "parse_range",
    "resolve_threads",
    "to_bool",
]
