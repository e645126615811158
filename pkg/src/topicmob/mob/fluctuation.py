"""Score-based parameter instability tests.

Scores are decorrelated with the outer-product estimate of their covariance.
Unordered candidates use the chi-squared (LM-type) functional over the
partition induced by the levels; ordered candidates use the sup-LM functional
over breakpoints in a trimmed range.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special, stats

logger = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-10
SUPLM_SIM_REPS = 20000
SUPLM_SIM_GRID = 1000
SUPLM_SIM_SEED = 20070101
SUPLM_TAIL_SWITCH = 0.02


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int
    pvalue: float
    log_pvalue: float

    @classmethod
    def constant(cls) -> "TestResult":
        return cls(0.0, 0, 1.0, 0.0)


def whiten(scores: np.ndarray) -> np.ndarray:
    """Scores times a pseudo-inverse square root of their mean outer product.

    Directions with eigenvalue below ``EIGEN_FLOOR`` times the largest are
    dropped, so the result has ``rank`` columns.
    """
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    J = scores.T @ scores / n
    J = 0.5 * (J + J.T)
    vals, vecs = np.linalg.eigh(J)
    top = vals.max() if vals.size else 0.0
    if top <= 0:
        return np.zeros((n, 0))
    keep = vals > EIGEN_FLOOR * top
    return scores @ (vecs[:, keep] / np.sqrt(vals[keep]))


def collapse_small_levels(codes: np.ndarray, min_size: int = 2) -> np.ndarray:
    """Merge every level with fewer than ``min_size`` members into the level nearest in count."""
    codes = np.asarray(codes).copy()
    while True:
        labels, counts = np.unique(codes, return_counts=True)
        small = np.flatnonzero(counts < min_size)
        if not small.size or labels.size < 2:
            return codes
        i = small[0]
        others = np.delete(np.arange(labels.size), i)
        j = others[np.argmin(np.abs(counts[others] - counts[i]))]
        logger.debug("collapsing level %r (n=%d) into %r", labels[i], counts[i], labels[j])
        codes[codes == labels[i]] = labels[j]


def categorical_test(white: np.ndarray, codes: np.ndarray) -> TestResult:
    codes = collapse_small_levels(codes)
    labels, inverse, counts = np.unique(codes, return_inverse=True, return_counts=True)
    r = white.shape[1]
    if labels.size < 2 or r == 0:
        return TestResult.constant()
    sums = np.zeros((labels.size, r))
    np.add.at(sums, inverse, white)
    stat = float(np.sum(np.sum(sums**2, axis=1) / counts))
    df = (labels.size - 1) * r
    logp = float(stats.chi2.logsf(stat, df))
    return TestResult(stat, df, math.exp(logp), logp)


def _suplm_tail(stat: float, k: int, trim: float) -> float:
    """Large-statistic approximation to P(sup LM > stat) for a k-dim Brownian bridge."""
    lam = (1 - trim) ** 2 / trim**2
    if stat <= k:
        return 1.0
    log_dens = 0.5 * k * math.log(stat) - 0.5 * stat - special.gammaln(0.5 * k) - 0.5 * k * math.log(2)
    bracket = (1 - k / stat) * math.log(lam) + 2 / stat
    if bracket <= 0:
        return 1.0
    return min(1.0, math.exp(log_dens + math.log(bracket)))


@lru_cache(maxsize=None)
def _suplm_null(k: int, trim: float) -> np.ndarray:
    """Sorted simulated sup-LM statistics under the null (Brownian bridge on a grid)."""
    rng = np.random.default_rng([SUPLM_SIM_SEED, k, int(round(trim * 1e6))])
    m = SUPLM_SIM_GRID
    t = np.arange(1, m + 1) / m
    lo, hi = int(math.ceil(trim * m)), int(math.floor((1 - trim) * m))
    denom = t[lo - 1 : hi] * (1 - t[lo - 1 : hi])
    out = np.empty(SUPLM_SIM_REPS)
    block = 500
    for b in range(0, SUPLM_SIM_REPS, block):
        nb = min(block, SUPLM_SIM_REPS - b)
        walk = np.cumsum(rng.standard_normal((nb, m, k)), axis=1) / math.sqrt(m)
        bridge = walk - t[None, :, None] * walk[:, -1:, :]
        lm = np.sum(bridge[:, lo - 1 : hi, :] ** 2, axis=2) / denom
        out[b : b + nb] = lm.max(axis=1)
    out.sort()
    return out


def suplm_pvalue(stat: float, k: int, trim: float = 0.1) -> float:
    """Asymptotic p-value of the sup-LM statistic with ``k`` parameters."""
    if k <= 0 or stat <= 0:
        return 1.0
    null = _suplm_null(k, round(trim, 6))
    p_sim = (null.size - np.searchsorted(null, stat, side="left")) / null.size
    if p_sim >= SUPLM_TAIL_SWITCH:
        return float(p_sim)
    return _suplm_tail(stat, k, trim)


def ordered_test(white: np.ndarray, z: np.ndarray, trim: float = 0.1) -> TestResult:
    """sup-LM over breakpoints between distinct values of ``z`` (NaNs sort last, never split)."""
    z = np.asarray(z, dtype=float)
    n, r = white.shape
    finite = ~np.isnan(z)
    if r == 0 or np.unique(z[finite]).size < 2:
        return TestResult.constant()
    order = np.argsort(np.where(finite, z, np.inf), kind="stable")
    zs = z[order]
    cum = np.cumsum(white[order], axis=0)
    i = np.arange(1, n + 1)
    # a breakpoint after position i is valid only between two distinct finite values
    valid = np.zeros(n, dtype=bool)
    valid[:-1] = (zs[:-1] != zs[1:]) & ~np.isnan(zs[:-1]) & ~np.isnan(zs[1:])
    valid &= (i >= math.ceil(trim * n)) & (i <= math.floor((1 - trim) * n))
    if not valid.any():
        return TestResult.constant()
    t = i[valid] / n
    lm = np.sum(cum[valid] ** 2, axis=1) / n / (t * (1 - t))
    stat = float(lm.max())
    p = suplm_pvalue(stat, r, trim)
    return TestResult(stat, r, p, math.log(p) if p > 0 else -math.inf)


def fluctuation_test(scores: np.ndarray, z, kind: str = "categorical", trim: float = 0.1) -> TestResult:
    """Instability test of the score process along split variable ``z``.

    ``kind`` is ``"categorical"`` (also used for binary variables) or ``"ordered"``.
    """
    scores = np.asarray(scores, dtype=float)
    z = np.asarray(z)
    if scores.shape[0] != z.shape[0]:
        raise ValueError("scores and z differ in length")
    white = whiten(scores)
    if kind == "ordered":
        return ordered_test(white, z.astype(float), trim)
    if kind not in ("categorical", "binary"):
        raise ValueError(f"unknown variable kind {kind!r}")
    return categorical_test(white, z)
