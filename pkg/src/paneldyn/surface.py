"""
Cubic response surface in valuation and trend.

The surface keeps the nine monomials of the cubic model with
insignificant terms set to zero, evaluates it, locates the turning points
of the trend cross-section and solves for level sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import EmptyRange, NoInteriorExtrema, NoSignificantTerms
from .prep import CUBIC_TERMS

# (valuation power, trend power) of each monomial
POWERS = {
    "valuation": (1, 0),
    "valuation^2": (2, 0),
    "valuation^3": (3, 0),
    "trend": (0, 1),
    "trend^2": (0, 2),
    "trend^3": (0, 3),
    "trend*valuation": (1, 1),
    "trend^2*valuation": (1, 2),
    "trend*valuation^2": (2, 1),
}


@dataclass(frozen=True)
class CubicSurface:
    """Raw (unscaled) coefficients of the nine monomials."""

    coefficients: Dict[str, float]
    alpha: Optional[float] = None
    p_values: Dict[str, float] = field(default_factory=dict)
    zeroed: Tuple[str, ...] = ()
    scale: float = 1000.0  # presentation multiplier only

    def __post_init__(self):
        unknown = set(self.coefficients) - set(CUBIC_TERMS)
        if unknown:
            raise ValueError(f"not cubic surface terms: {', '.join(sorted(unknown))}")
        full = {name: float(self.coefficients.get(name, 0.0)) for name in CUBIC_TERMS}
        object.__setattr__(self, "coefficients", full)

    def __getitem__(self, name: str) -> float:
        return self.coefficients[name]

    def nonzero(self) -> Dict[str, float]:
        return {k: v for k, v in self.coefficients.items() if v != 0.0}

    def trend_polynomial(self, valuation: float = 0.0) -> Tuple[float, float, float, float]:
        """Coefficients ``(a0, a1, a2, a3)`` of the cubic in trend at fixed valuation."""
        c, v = self.coefficients, float(valuation)
        a0 = c["valuation"] * v + c["valuation^2"] * v**2 + c["valuation^3"] * v**3
        a1 = c["trend"] + c["trend*valuation"] * v + c["trend*valuation^2"] * v**2
        a2 = c["trend^2"] + c["trend^2*valuation"] * v
        a3 = c["trend^3"]
        return a0, a1, a2, a3


def reduce_surface(report, alpha: float = 0.10) -> CubicSurface:
    """
    Surface from a fitted cubic model keeping only terms with p < alpha.

    ``report`` is a :class:`~paneldyn.model_suite.RegressionReport` that
    contains all nine cubic monomials.
    """
    coefs = report.coefficients()
    pvals = report.p_values()
    missing = [t for t in CUBIC_TERMS if t not in coefs]
    if missing:
        raise ValueError(f"report for model {report.model_id} lacks cubic terms: {', '.join(missing)}")
    kept, zeroed = {}, []
    for name in CUBIC_TERMS:
        if pvals[name] < alpha:
            kept[name] = coefs[name]
        else:
            kept[name] = 0.0
            zeroed.append(name)
    if len(zeroed) == len(CUBIC_TERMS):
        raise NoSignificantTerms(f"no cubic term has p < {alpha:g}")
    return CubicSurface(kept, alpha, {k: pvals[k] for k in CUBIC_TERMS}, tuple(zeroed))


def evaluate(surface: CubicSurface, valuation, trend):
    """Surface value; broadcasts over array arguments."""
    v = np.asarray(valuation, dtype=float)
    t = np.asarray(trend, dtype=float)
    out = np.zeros(np.broadcast(v, t).shape)
    for name, (pv, pt) in POWERS.items():
        c = surface.coefficients[name]
        if c != 0.0:
            out = out + c * v**pv * t**pt
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TrendGeometry:
    valuation: float
    local_min_t: float
    local_max_t: float
    local_min_r: float
    local_max_r: float
    symmetry_ratio: float
    # trend values separating the monotone regimes, ascending
    boundaries: Tuple[float, float]

    def as_record(self, scale: float = 1.0) -> Dict[str, float]:
        return {
            "valuation": self.valuation,
            "local_min_t": self.local_min_t,
            "local_max_t": self.local_max_t,
            "local_min_r": self.local_min_r * scale,
            "local_max_r": self.local_max_r * scale,
            "symmetry_ratio": self.symmetry_ratio,
            "boundary_low": self.boundaries[0],
            "boundary_high": self.boundaries[1],
        }


def trend_geometry(surface: CubicSurface, valuation: float = 0.0) -> TrendGeometry:
    """
    Turning points of the trend cross-section at fixed valuation.

    Roots of ``a1 + 2 a2 T + 3 a3 T^2`` with the sign of the second
    derivative telling the local minimum from the maximum.
    """
    _, a1, a2, a3 = surface.trend_polynomial(valuation)
    if a3 == 0.0:
        raise NoInteriorExtrema("trend cross-section has no cubic term")
    A, B, C = 3.0 * a3, 2.0 * a2, a1
    disc = B * B - 4.0 * A * C
    if not disc > 0.0:
        raise NoInteriorExtrema("trend derivative has no distinct real roots")
    sq = math.sqrt(disc)
    # cancellation-free quadratic roots
    q = -0.5 * (B + math.copysign(sq, B)) if B != 0.0 else -0.5 * math.copysign(sq, A)
    r1, r2 = q / A, C / q
    lo, hi = sorted((r1, r2))
    # second derivative 6 a3 T + 2 a2 is negative at the maximum
    if 6.0 * a3 * lo + 2.0 * a2 < 0.0:
        t_max, t_min = lo, hi
    else:
        t_min, t_max = lo, hi
    r_min = evaluate(surface, valuation, t_min)
    r_max = evaluate(surface, valuation, t_max)
    ratio = abs(t_min) / abs(t_max) if t_max != 0.0 else math.inf
    return TrendGeometry(float(valuation), t_min, t_max, r_min, r_max, ratio, (lo, hi))


def _poly(coefs, x):
    a0, a1, a2, a3 = coefs
    return ((a3 * x + a2) * x + a1) * x + a0


def _dpoly(coefs, x):
    _, a1, a2, a3 = coefs
    return (3.0 * a3 * x + 2.0 * a2) * x + a1


def _polish(coefs, x, iterations=8):
    for _ in range(iterations):
        d = _dpoly(coefs, x)
        if d == 0.0:
            break
        step = _poly(coefs, x) / d
        x_new = x - step
        if abs(_poly(coefs, x_new)) >= abs(_poly(coefs, x)):
            break
        x = x_new
    return x


def cubic_real_roots(a0: float, a1: float, a2: float, a3: float) -> Tuple[float, ...]:
    """
    Distinct real roots of ``a3 x^3 + a2 x^2 + a1 x + a0`` in ascending
    order, by the trigonometric or Cardano formula on the depressed cubic
    followed by Newton polishing. Lower-degree cases are handled directly.
    """
    coefs = (float(a0), float(a1), float(a2), float(a3))
    scale = max(abs(c) for c in coefs)
    if scale == 0.0:
        raise ValueError("zero polynomial has every real number as a root")
    c0, c1, c2, c3 = (c / scale for c in coefs)
    if c3 == 0.0:
        if c2 == 0.0:
            roots = [] if c1 == 0.0 else [-c0 / c1]
        else:
            disc = c1 * c1 - 4.0 * c2 * c0
            if disc < 0.0:
                roots = []
            elif disc == 0.0:
                roots = [-c1 / (2.0 * c2)]
            else:
                q = -0.5 * (c1 + math.copysign(math.sqrt(disc), c1))
                roots = [q / c2, c0 / q]
    else:
        b, c, d = c2 / c3, c1 / c3, c0 / c3
        shift = b / 3.0
        p = c - b * b / 3.0
        q = 2.0 * b**3 / 27.0 - b * c / 3.0 + d
        # rescale x = r y so the depressed cubic y^3 + p' y + q' has O(1) terms
        r = max(math.sqrt(abs(p)), abs(q) ** (1.0 / 3.0))
        if r == 0.0:
            xs = [0.0]
        else:
            p, q = p / r / r, q / r / r / r
            half_q = q / 2.0
            third_p = p / 3.0
            delta = half_q * half_q + third_p**3
            if abs(delta) <= 1e-12:
                ys = [0.0] if p == 0.0 else [3.0 * q / p, -1.5 * q / p]
            elif delta < 0.0:
                m = 2.0 * math.sqrt(-third_p)
                arg = max(-1.0, min(1.0, 3.0 * q / (p * m)))
                theta = math.acos(arg) / 3.0
                ys = [m * math.cos(theta - 2.0 * math.pi * k / 3.0) for k in range(3)]
            else:
                sq = math.sqrt(delta)
                ys = [float(np.cbrt(-half_q + sq) + np.cbrt(-half_q - sq))]
            xs = [r * y for y in ys]
        roots = [x - shift for x in xs]
    roots = sorted(_polish((c0, c1, c2, c3), r) for r in roots)
    distinct = []
    for r in roots:
        if not distinct or abs(r - distinct[-1]) > 1e-9 * max(1.0, abs(r)):
            distinct.append(r)
    return tuple(distinct)


def level_set_roots(surface: CubicSurface, valuation: float, target_return: float) -> Tuple[float, ...]:
    """Trend values at which the surface equals ``target_return`` (0 to 3, ascending)."""
    a0, a1, a2, a3 = surface.trend_polynomial(valuation)
    try:
        return cubic_real_roots(a0 - target_return, a1, a2, a3)
    except ValueError:
        return ()


def _axis(lo: float, hi: float, steps: int, name: str) -> np.ndarray:
    if steps < 1 or not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise EmptyRange(f"{name} range [{lo}, {hi}] with {steps} steps is empty")
    if steps == 1:
        return np.array([float(lo)])
    return np.linspace(lo, hi, steps)


def grid_emit(surface: CubicSurface, ranges: Sequence[Tuple[float, float]],
              steps: Sequence[int]) -> pd.DataFrame:
    """
    Surface values on a valuation x trend grid as columns
    ``valuation, trend, return`` (valuation varying slowest).
    """
    (vlo, vhi), (tlo, thi) = ranges
    nv, nt = steps
    v = _axis(vlo, vhi, int(nv), "valuation")
    t = _axis(tlo, thi, int(nt), "trend")
    vv, tt = np.meshgrid(v, t, indexing="ij")
    r = evaluate(surface, vv.ravel(), tt.ravel())
    return pd.DataFrame({"valuation": vv.ravel(), "trend": tt.ravel(), "return": np.atleast_1d(r)})


def cross_section(surface: CubicSurface, along: str, lo: float, hi: float, steps: int,
                  fixed: float = 0.0) -> pd.DataFrame:
    """One-dimensional slice: vary ``along`` ("valuation" or "trend") with the other fixed."""
    if along == "trend":
        return grid_emit(surface, [(fixed, fixed), (lo, hi)], [1, steps])
    if along == "valuation":
        return grid_emit(surface, [(lo, hi), (fixed, fixed)], [steps, 1])
    raise ValueError("along must be 'valuation' or 'trend'")


__all__ = [
    "CubicSurface",
    "TrendGeometry",
    "cross_section",
    "cubic_real_roots",
    "evaluate",
    "grid_emit",
    "level_set_roots",
    "reduce_surface",
    "trend_geometry",
]
