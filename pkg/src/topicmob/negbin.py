"""Negative binomial machinery for intercept-only node models.

Parameterisation is by mean ``mu`` and shape ``theta`` so that
``Var(Y) = mu + mu**2 / theta``. All fitting works on the value histogram of
the sample, which makes every fit exactly invariant to the order of the
observations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special

from .exceptions import BoundaryError

logger = logging.getLogger(__name__)

THETA_MIN = 1e-3
THETA_MAX = 1e6
SCORE_TOL = 1e-8
MAX_NEWTON = 200


@dataclass(frozen=True)
class NbParams:
    mu: float
    theta: float

    def __post_init__(self):
        for name in ("mu", "theta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")

    @property
    def variance(self) -> float:
        return self.mu + self.mu**2 / self.theta


@dataclass(frozen=True)
class NbFit:
    mu: float
    theta: float
    log_mu: float
    se_log_mu: float
    se_theta: float
    loglik: float
    deviance: float
    n: int
    converged: bool
    iterations: int
    flag: str = ""

    @property
    def params(self) -> NbParams:
        return NbParams(self.mu, self.theta)

    @property
    def df(self) -> int:
        return self.n - 1

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2 * 2

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + 2 * math.log(self.n)

    @property
    def near_poisson(self) -> bool:
        return self.flag == "near-Poisson"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["df"] = self.df
        return out

    @classmethod
    def from_dict(cls, obj) -> "NbFit":
        fields = cls.__dataclass_fields__
        return cls(**{k: v for k, v in obj.items() if k in fields})


@dataclass(frozen=True)
class PoissonFit:
    mu: float
    loglik: float
    n: int

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + math.log(self.n)


def _as_counts(y) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        arr = arr.ravel()
    if arr.size and (np.any(arr < 0) or not np.all(np.mod(arr, 1) == 0)):
        raise ValueError("counts must be nonnegative integers")
    return arr.astype(np.int64)


def _histogram(y) -> tuple[np.ndarray, np.ndarray]:
    vals, weights = np.unique(_as_counts(y), return_counts=True)
    return vals.astype(float), weights.astype(float)


def nb_logpmf(y, mu, theta=None):
    """Log probability mass at ``y``. Accepts ``(y, NbParams)`` or ``(y, mu, theta)``."""
    if theta is None:
        mu, theta = mu.mu, mu.theta
    if not (np.all(np.asarray(mu) > 0) and np.all(np.asarray(theta) > 0)):
        raise ValueError("mu and theta must be positive")
    y = np.asarray(y, dtype=float)
    out = (
        special.gammaln(y + theta)
        - special.gammaln(theta)
        - special.gammaln(y + 1.0)
        + special.xlogy(y, mu / (mu + theta))
        - theta * np.log1p(mu / theta)
    )
    return out if out.ndim else float(out)


def sample_nb(params: NbParams, n: int, seed=None) -> np.ndarray:
    """Draw via the gamma-Poisson mixture: ``V ~ Gamma(theta, 1/theta)``, ``Y | V ~ Poisson(mu V)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.gamma(shape=params.theta, scale=1.0 / params.theta, size=n)
    return rng.poisson(params.mu * v)


def _loglik_hist(vals, w, mu, theta) -> float:
    terms = (
        special.gammaln(vals + theta)
        - special.gammaln(theta)
        - special.gammaln(vals + 1.0)
        + special.xlogy(vals, mu / (mu + theta))
        - theta * np.log1p(mu / theta)
    )
    return float(np.dot(w, terms))


def _deviance_hist(vals, w, mu, theta) -> float:
    # saturated model keeps theta fixed; y = 0 term is the mu -> 0 limit
    sat = special.xlogy(vals, vals / mu) - (vals + theta) * np.log((vals + theta) / (mu + theta))
    return float(2.0 * np.dot(w, sat))


def _profile_score(vals, w, n, mu, theta) -> tuple[float, float]:
    """d/dtheta and d2/dtheta2 of the log-likelihood at mu fixed to the sample mean."""
    g = np.dot(w, special.digamma(vals + theta) - special.digamma(theta)) - n * np.log1p(mu / theta)
    h = np.dot(w, special.polygamma(1, vals + theta) - special.polygamma(1, theta)) + n * (
        1.0 / theta - 1.0 / (mu + theta)
    )
    return float(g), float(h)


def _info_matrix(vals, w, n, mu, theta) -> np.ndarray:
    """Observed information in (log mu, theta)."""
    s = mu + theta
    i_mm = np.dot(w, mu * theta * (theta + vals) / s**2)
    i_mt = -np.dot(w, (vals - mu) * mu / s**2)
    i_tt = -(
        np.dot(w, special.polygamma(1, vals + theta) - special.polygamma(1, theta))
        + n * (1.0 / theta - 1.0 / s)
        - np.dot(w, (mu - vals) / s**2)
    )
    return np.array([[i_mm, i_mt], [i_mt, i_tt]])


def _solve_theta(vals, w, n, mu, theta0) -> tuple[float, bool, int, str]:
    """Safeguarded Newton on log(theta) inside [THETA_MIN, THETA_MAX]."""
    lo, hi = math.log(THETA_MIN), math.log(THETA_MAX)
    g_hi, _ = _profile_score(vals, w, n, mu, THETA_MAX)
    if g_hi >= 0:
        return THETA_MAX, False, 0, "near-Poisson"
    g_lo, _ = _profile_score(vals, w, n, mu, THETA_MIN)
    if g_lo <= 0:
        return THETA_MIN, False, 0, "theta at lower bound"

    eta = math.log(min(max(theta0, THETA_MIN), THETA_MAX))
    for it in range(1, MAX_NEWTON + 1):
        theta = math.exp(eta)
        g, h = _profile_score(vals, w, n, mu, theta)
        if abs(g) < SCORE_TOL:
            return theta, True, it, ""
        if g > 0:
            lo = eta
        else:
            hi = eta
        # score and curvature in log(theta)
        g_eta = theta * g
        h_eta = theta * theta * h + g_eta
        step = -g_eta / h_eta if h_eta < 0 else math.inf
        cand = eta + step
        if not (lo < cand < hi):
            cand = 0.5 * (lo + hi)
        if abs(cand - eta) <= 1e-15 * max(1.0, abs(eta)) or hi - lo < 1e-14:
            return math.exp(cand), True, it, ""
        eta = cand
    return math.exp(eta), False, MAX_NEWTON, "iteration limit"


def fit_nb_intercept(sample) -> NbFit:
    """Maximum likelihood fit of an intercept-only negative binomial.

    The MLE of the mean is the sample mean for every theta, so theta is found
    on the profile likelihood. Samples with no overdispersion put theta on the
    upper cap with ``converged=False`` and ``flag="near-Poisson"``.
    """
    vals, w = _histogram(sample)
    n = int(w.sum())
    if n < 2:
        raise ValueError("need at least two observations")
    mu = float(np.dot(vals, w) / n)
    if mu <= 0:
        raise BoundaryError("mu at zero boundary: all counts are zero")
    var = float(np.dot(w, (vals - mu) ** 2) / n)
    theta0 = mu * mu / max(var - mu, 1e-8)
    theta, converged, iterations, flag = _solve_theta(vals, w, n, mu, theta0)
    if flag:
        logger.debug("negative binomial fit: %s (theta=%g, n=%d)", flag, theta, n)

    info = _info_matrix(vals, w, n, mu, theta)
    try:
        cov = np.linalg.inv(info)
        se = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    except np.linalg.LinAlgError:
        se = np.array([math.sqrt(1.0 / info[0, 0]), math.nan])

    return NbFit(
        mu=mu,
        theta=theta,
        log_mu=math.log(mu),
        se_log_mu=float(se[0]),
        se_theta=float(se[1]),
        loglik=_loglik_hist(vals, w, mu, theta),
        deviance=_deviance_hist(vals, w, mu, theta),
        n=n,
        converged=converged,
        iterations=iterations,
        flag=flag,
    )


def score_contributions(sample, fit: NbFit | NbParams) -> np.ndarray:
    """Per-observation gradient of the log-likelihood w.r.t. ``(log mu, theta)``; shape ``(n, 2)``."""
    y = _as_counts(sample).astype(float)
    mu, theta = fit.mu, fit.theta
    s = mu + theta
    d_logmu = (y - mu) * theta / s
    d_theta = special.digamma(y + theta) - special.digamma(theta) - np.log1p(mu / theta) - (y - mu) / s
    return np.column_stack([d_logmu, d_theta])


def deviance(sample, fit: NbFit | NbParams) -> float:
    """Residual deviance against the saturated model with theta held at its fitted value."""
    vals, w = _histogram(sample)
    return _deviance_hist(vals, w, fit.mu, fit.theta)


def loglik(sample, fit: NbFit | NbParams) -> float:
    vals, w = _histogram(sample)
    return _loglik_hist(vals, w, fit.mu, fit.theta)


def fit_poisson_intercept(sample) -> PoissonFit:
    vals, w = _histogram(sample)
    n = int(w.sum())
    if n < 1:
        raise ValueError("empty sample")
    mu = float(np.dot(vals, w) / n)
    if mu <= 0:
        raise BoundaryError("mu at zero boundary: all counts are zero")
    ll = float(np.dot(w, special.xlogy(vals, mu) - mu - special.gammaln(vals + 1.0)))
    return PoissonFit(mu=mu, loglik=ll, n=n)


def fit_hist(vals: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    """Fast ``(mu, theta, loglik)`` for a value histogram; used inside split search.

    Raises :class:`BoundaryError` when the histogram has no positive counts.
    """
    n = float(w.sum())
    mu = float(np.dot(vals, w) / n)
    if mu <= 0:
        raise BoundaryError("mu at zero boundary: all counts are zero")
    var = float(np.dot(w, (vals - mu) ** 2) / n)
    theta0 = mu * mu / max(var - mu, 1e-8)
    theta, *_ = _solve_theta(vals, w, n, mu, theta0)
    return mu, theta, _loglik_hist(vals, w, mu, theta)
