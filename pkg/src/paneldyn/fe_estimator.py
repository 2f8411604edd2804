"""
Two-way (firm and day) fixed-effects least squares on a balanced panel.

Both effect sets are removed by the within transformation

    x~[i,t] = x[i,t] - mean_t x[i,.] - mean_i x[.,t] + mean x[.,.]

after which slopes come from ordinary least squares on the transformed
data. Standard errors are either clustered by firm or use the leverage
adjusted heteroscedasticity-robust estimator with squared residuals
divided by ``(1 + h)^2`` (``hc_divisor="paper_plus"``) or the usual
``(1 - h)^2`` (``hc_divisor="hc3_minus"``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, stats

from .errors import MismatchedSamples, RankDeficient, SingleCluster, UnbalancedPanel

# |R_jj| below this fraction of the column norm marks a dependent column
_RANK_TOL = 1e-10


def within_transform(x) -> np.ndarray:
    """
    Two-way demeaning of a balanced ``(n_firms, n_days[, k])`` array.

    NaN entries are rejected: the transformation is only exact on a
    balanced panel.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim < 2:
        raise UnbalancedPanel("within_transform needs a (firms, days) grid")
    if not np.all(np.isfinite(x)):
        raise UnbalancedPanel("panel has missing or non-finite cells")
    firm_mean = x.mean(axis=1, keepdims=True)
    day_mean = x.mean(axis=0, keepdims=True)
    grand = x.mean(axis=(0, 1), keepdims=True)
    return x - firm_mean - day_mean + grand


@dataclass(frozen=True, eq=False)
class OLSResult:
    coef: np.ndarray
    resid: np.ndarray
    r: np.ndarray  # upper-triangular factor of X, so X'X = R'R
    rss: float


def ols_fit(X, y) -> OLSResult:
    """
    Least squares through a Householder QR factorization.

    Raises
    ------
    RankDeficient
        With ``column`` set to the first regressor that lies (numerically)
        in the span of the preceding ones.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if n < k:
        raise RankDeficient(f"{n} observations for {k} regressors", column=n)
    q, r = np.linalg.qr(X, mode="reduced")
    norms = np.linalg.norm(X, axis=0)
    diag = np.abs(np.diag(r))
    dependent = ~(diag > _RANK_TOL * np.where(norms > 0, norms, 1.0)) | (norms == 0)
    if dependent.any():
        j = int(np.flatnonzero(dependent)[0])
        raise RankDeficient(f"regressor {j} is linearly dependent on earlier columns", column=j)
    coef = linalg.solve_triangular(r, q.T @ y)
    resid = y - X @ coef
    return OLSResult(coef, resid, r, float(resid @ resid))


def _bread(r):
    r_inv = linalg.solve_triangular(r, np.eye(r.shape[0]))
    return r_inv @ r_inv.T


def _symmetrize(a):
    return 0.5 * (a + a.T)


def leverage(X, r=None) -> np.ndarray:
    """Diagonal of the hat matrix ``X (X'X)^-1 X'``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if r is None:
        r = np.linalg.qr(X, mode="r")
    z = linalg.solve_triangular(r, X.T, trans="T")  # R^-T X'
    return (z * z).sum(axis=0)


def robust_covariance_dm3(X, resid, hc_divisor: str = "paper_plus", r=None) -> np.ndarray:
    """
    Sandwich covariance ``(X'X)^-1 X' diag(w) X (X'X)^-1`` with
    ``w = e^2 / (1 + h)^2`` (``paper_plus``) or ``e^2 / (1 - h)^2``
    (``hc3_minus``), ``h`` being the leverage of each row.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    e = np.asarray(resid, dtype=float)
    if r is None:
        r = np.linalg.qr(X, mode="r")
    h = leverage(X, r)
    if hc_divisor == "paper_plus":
        w = e**2 / (1.0 + h) ** 2
    elif hc_divisor == "hc3_minus":
        w = e**2 / (1.0 - h) ** 2
    else:
        raise ValueError(f"unknown hc_divisor {hc_divisor!r}")
    bread = _bread(r)
    meat = (X * w[:, None]).T @ X
    return _symmetrize(bread @ meat @ bread)


def cluster_covariance(X, resid, clusters, n_params: Optional[int] = None,
                       small_sample: bool = True, r=None) -> np.ndarray:
    """
    Cluster-robust sandwich with meat ``sum_g (X_g' e_g)(X_g' e_g)'``.

    The small-sample factor is ``G/(G-1) * (N-1)/(N-K)`` where ``K`` is
    ``n_params`` (default: the number of columns of ``X``).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    e = np.asarray(resid, dtype=float)
    labels = np.asarray(clusters)
    if labels.shape[0] != X.shape[0]:
        raise ValueError("cluster labels must cover every row")
    _, codes = np.unique(labels, return_inverse=True)
    g = int(codes.max()) + 1
    if g < 2:
        raise SingleCluster("clustered covariance needs at least two clusters")
    n, k = X.shape
    scores = np.zeros((g, k))
    np.add.at(scores, codes, X * e[:, None])
    if r is None:
        r = np.linalg.qr(X, mode="r")
    bread = _bread(r)
    meat = scores.T @ scores
    cov = bread @ meat @ bread
    if small_sample:
        kk = k if n_params is None else n_params
        cov = cov * (g / (g - 1)) * ((n - 1) / (n - kk))
    return _symmetrize(cov)


def theil_r2(r2: float, n_obs: int, n_params: int) -> float:
    """Degrees-of-freedom adjusted R^2, ``1 - (1 - R^2)(n - 1)/(n - k)``."""
    if n_obs <= n_params:
        raise ValueError("need more observations than parameters")
    return 1.0 - (1.0 - r2) * (n_obs - 1) / (n_obs - n_params)


@dataclass(frozen=True)
class FTest:
    statistic: float
    dof: tuple
    p_value: float


@dataclass(frozen=True, eq=False)
class PooledFit:
    """Pooled OLS with a common intercept, the restricted model of the F test."""

    coef: np.ndarray  # intercept first
    rss: float
    n_obs: int
    regressors: tuple


def pooled_ols(y, X, regressors: Sequence[str]) -> PooledFit:
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    fit = ols_fit(np.column_stack([np.ones(len(y)), X]), y)
    return PooledFit(fit.coef, fit.rss, len(y), tuple(regressors))


@dataclass(frozen=True, eq=False)
class FEFit:
    """Result of a two-way fixed-effects regression."""

    regressors: tuple
    coef: np.ndarray
    cov: np.ndarray
    cov_type: str
    resid: np.ndarray  # (n_firms, n_days)
    intercept: float
    firm_effects: np.ndarray
    time_effects: np.ndarray
    rss: float
    tss: float
    n_obs: int
    n_firms: int
    n_days: int
    cov_cluster: Optional[np.ndarray] = None
    cov_dm3: Optional[np.ndarray] = None

    @property
    def n_params(self) -> int:
        """Slopes, intercept and the free firm and day effects."""
        return len(self.regressors) + 1 + (self.n_firms - 1) + (self.n_days - 1)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    @property
    def tvalues(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef / self.se

    @property
    def r2(self) -> float:
        return 1.0 - self.rss / self.tss if self.tss > 0 else 1.0

    @property
    def theil_r2(self) -> float:
        return theil_r2(self.r2, self.n_obs, self.n_params)


def recover_effects(y, X, coef):
    """
    Intercept, firm effects and day effects implied by within-estimated
    slopes, normalized so each effect set sums to zero.
    """
    y = np.asarray(y, dtype=float)
    u = y - (X @ coef if X.shape[-1] else 0.0)
    grand = u.mean()
    firm = u.mean(axis=1) - grand
    day = u.mean(axis=0) - grand
    return float(grand), firm, day


def fit_two_way(y, X, regressors: Sequence[str], cov_type: str = "cluster",
                hc_divisor: str = "paper_plus", both: bool = False) -> FEFit:
    """
    Two-way fixed-effects fit.

    Parameters
    ----------
    y : array (n_firms, n_days)
    X : array (n_firms, n_days, k)
    regressors : names of the ``k`` slope columns
    cov_type : "cluster" (by firm) or "dm3"
    both : compute both covariance estimators and keep them on the result

    Notes
    -----
    The clustered small-sample factor counts the slopes plus the free day
    effects as parameters; firm effects are nested within the clusters.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[..., None]
    n_firms, n_days, k = X.shape
    if y.shape != (n_firms, n_days):
        raise UnbalancedPanel(f"target shape {y.shape} does not match design {(n_firms, n_days)}")
    if len(regressors) != k:
        raise ValueError("one name per regressor column is required")
    if cov_type not in ("cluster", "dm3"):
        raise ValueError(f"unknown cov_type {cov_type!r}")

    yt = within_transform(y).ravel()
    Xt = within_transform(X).reshape(-1, k)
    fit = ols_fit(Xt, yt)
    n_obs = n_firms * n_days

    cov_cluster = cov_dm3 = None
    if cov_type == "cluster" or both:
        firm_ids = np.repeat(np.arange(n_firms), n_days)
        cov_cluster = cluster_covariance(Xt, fit.resid, firm_ids, n_params=k + n_days - 1, r=fit.r)
    if cov_type == "dm3" or both:
        cov_dm3 = robust_covariance_dm3(Xt, fit.resid, hc_divisor, r=fit.r)
    cov = cov_cluster if cov_type == "cluster" else cov_dm3

    intercept, firm_fx, day_fx = recover_effects(y, X, fit.coef)
    return FEFit(
        regressors=tuple(regressors),
        coef=fit.coef,
        cov=cov,
        cov_type=cov_type,
        resid=fit.resid.reshape(n_firms, n_days),
        intercept=intercept,
        firm_effects=firm_fx,
        time_effects=day_fx,
        rss=fit.rss,
        tss=float(((y - y.mean()) ** 2).sum()),
        n_obs=n_obs,
        n_firms=n_firms,
        n_days=n_days,
        cov_cluster=cov_cluster,
        cov_dm3=cov_dm3,
    )


def f_test_no_fixed_effects(restricted: PooledFit, unrestricted: FEFit) -> FTest:
    """
    F test of the joint null that all firm and day effects are zero.

    ``F = ((RSS_r - RSS_u) / q) / (RSS_u / (n - k_u))`` with
    ``q = (n_firms - 1) + (n_days - 1)``.
    """
    if restricted.n_obs != unrestricted.n_obs or tuple(restricted.regressors) != tuple(unrestricted.regressors):
        raise MismatchedSamples("restricted and unrestricted fits use different samples or regressors")
    q = (unrestricted.n_firms - 1) + (unrestricted.n_days - 1)
    dof2 = unrestricted.n_obs - unrestricted.n_params
    if q < 1 or dof2 < 1:
        raise ValueError("not enough observations for the fixed-effects F test")
    if unrestricted.rss <= 0:
        stat = np.inf if restricted.rss > 0 else 0.0
    else:
        stat = max(restricted.rss - unrestricted.rss, 0.0) / q / (unrestricted.rss / dof2)
    return FTest(float(stat), (q, dof2), float(stats.f.sf(stat, q, dof2)))


def report_intercept(intercept: float, firm_effects, time_effects) -> float:
    """Mean over firms of the mean over days of ``intercept + mu_i + gamma_t``."""
    mu = np.asarray(firm_effects, dtype=float)
    gamma = np.asarray(time_effects, dtype=float)
    total = intercept + mu[:, None] + gamma[None, :]
    return float(total.mean(axis=1).mean())
