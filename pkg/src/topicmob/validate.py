"""Bootstrap stability of a fitted tree and per-segment fit diagnostics.

Resampled trees are compared with the original by a segment-wise Jaccard
index computed over the predicted segments of all original reports (in-bag
and out-of-bag). Each original segment claims the resampled segment with the
largest Jaccard index.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .exceptions import BoundaryError
from .mob.tree import Tree, TreeConfig, apply_tree, grow
from .negbin import fit_poisson_intercept

logger = logging.getLogger(__name__)

RRS = "RRS"
SRS = "SRS"
_SCHEME_CODE = {RRS: 0, SRS: 1}


@dataclass(frozen=True)
class ResamplePlan:
    scheme: str = RRS
    B: int = 200
    fraction: float = 5 / 6
    seed: int = 0
    alpha: float | None = 1e-3
    min_segment: float | None = None

    def __post_init__(self):
        if self.scheme not in _SCHEME_CODE:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")

    def refit_config(self, original: TreeConfig, original_min_segment: int) -> TreeConfig:
        """Tuning for resampled trees: ``alpha`` override and min_segment scaled by ``fraction``."""
        alpha = original.alpha if self.alpha is None else self.alpha
        if self.min_segment is not None:
            min_seg = self.min_segment
        else:
            min_seg = max(2, math.floor(self.fraction * original_min_segment))
        return replace(original, alpha=alpha, min_segment=min_seg)


@dataclass(frozen=True)
class MatchResult:
    b: int
    scheme: str
    k: int
    l: int
    jaccard: float
    log_mu: float
    theta: float


def _rng(plan: ResamplePlan, b: int) -> np.random.Generator:
    return np.random.default_rng([plan.seed, _SCHEME_CODE[plan.scheme], b])


def resample(segments: np.ndarray, plan: ResamplePlan, b: int) -> np.ndarray:
    """Row indices drawn with replacement for resample ``b``.

    ``segments`` holds the original segment of every report (needed for SRS,
    ignored for RRS).
    """
    segments = np.asarray(segments)
    n = segments.size
    rng = _rng(plan, b)
    if plan.scheme == RRS:
        return rng.integers(0, n, size=int(math.floor(plan.fraction * n)))
    parts = []
    for k in np.unique(segments):
        members = np.flatnonzero(segments == k)
        size = int(math.floor(plan.fraction * members.size))
        if size < 1:
            logger.info("segment %s has %d reports; drawing 1", k, members.size)
            size = 1
        parts.append(members[rng.integers(0, members.size, size=size)])
    return np.concatenate(parts)


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        raise ValueError("Jaccard index of two empty sets is undefined")
    return len(a & b) / len(a | b)


def jaccard_matrix(orig: np.ndarray, other: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jaccard index between every pair of labels; returns ``(matrix, orig_labels, other_labels)``."""
    ks, ki = np.unique(orig, return_inverse=True)
    ls, li = np.unique(other, return_inverse=True)
    inter = np.zeros((ks.size, ls.size))
    np.add.at(inter, (ki, li), 1.0)
    size_k = inter.sum(axis=1)
    size_l = inter.sum(axis=0)
    union = size_k[:, None] + size_l[None, :] - inter
    return inter / union, ks, ls


def match_segments(
    original: np.ndarray | Tree,
    resampled: np.ndarray | Tree,
    X: pd.DataFrame | None = None,
    b: int = 0,
    scheme: str = RRS,
    resampled_tree: Tree | None = None,
) -> list[MatchResult]:
    """Match each original segment to its best Jaccard counterpart.

    Either tree may be given directly (with ``X``, the original reports) or as
    its precomputed segment labels for those reports. Ties go to the lowest
    resampled segment number.
    """
    if isinstance(resampled, Tree):
        resampled_tree = resampled
    orig = apply_tree(original, X) if isinstance(original, Tree) else np.asarray(original)
    other = apply_tree(resampled, X) if isinstance(resampled, Tree) else np.asarray(resampled)
    J, ks, ls = jaccard_matrix(orig, other)
    fits = {}
    if resampled_tree is not None:
        fits = {leaf.segment: leaf.fit for leaf in resampled_tree.leaves()}
    out = []
    for i, k in enumerate(ks):
        j = int(np.argmax(J[i]))
        l = int(ls[j])
        fit = fits.get(l)
        out.append(
            MatchResult(
                b=b,
                scheme=scheme,
                k=int(k),
                l=l,
                jaccard=float(J[i, j]),
                log_mu=fit.log_mu if fit else math.nan,
                theta=fit.theta if fit else math.nan,
            )
        )
    return out


def _one_resample(X, y, tree: Tree, segments, plan: ResamplePlan, b: int) -> list[MatchResult]:
    rows = resample(segments, plan, b)
    config = plan.refit_config(tree.config, tree.min_segment)
    try:
        tb = grow(X.iloc[rows].reset_index(drop=True), y[rows], tree.candidates, config)
    except (BoundaryError, ValueError) as exc:
        logger.warning("%s resample %d failed: %s", plan.scheme, b, exc)
        return []
    return match_segments(segments, tb, X, b=b, scheme=plan.scheme)


def run_stability(
    X: pd.DataFrame,
    y,
    tree: Tree,
    plans: Sequence[ResamplePlan],
    n_jobs: int = 1,
) -> list[MatchResult]:
    """Refit ``tree`` on every resample of every plan and match segments back to it."""
    y = np.asarray(y)
    segments = apply_tree(tree, X)
    jobs = [(plan, b) for plan in plans for b in range(plan.B)]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_one_resample)(X, y, tree, segments, plan, b) for plan, b in jobs
    )
    return [m for batch in results for m in batch]


def stability_summary(matches: Sequence[MatchResult], strong: float = 0.8) -> dict:
    """Fractions of coinciding (Jaccard 1) and strongly corresponding matches, pooled and per scheme,
    plus the per-segment quartiles of the concordance."""
    if not matches:
        raise ValueError("no matches to summarise")

    def fractions(ms):
        jac = np.array([m.jaccard for m in ms])
        return {
            "n_matches": int(jac.size),
            "coinciding": float(np.mean(jac == 1.0)),
            "strongly_corresponding": float(np.mean(jac >= strong)),
        }

    out = {"pooled": fractions(matches), "by_scheme": {}, "segments": {}}
    for scheme in sorted({m.scheme for m in matches}):
        out["by_scheme"][scheme] = fractions([m for m in matches if m.scheme == scheme])
    for k in sorted({m.k for m in matches}):
        jac = np.array([m.jaccard for m in matches if m.k == k])
        q1, med, q3 = np.quantile(jac, [0.25, 0.5, 0.75])
        out["segments"][str(k)] = {"median": float(med), "q1": float(q1), "q3": float(q3), "n": int(jac.size)}
    out["n_resamples"] = len({(m.scheme, m.b) for m in matches})
    return out


def parameter_stability(matches: Sequence[MatchResult]) -> dict[int, dict]:
    """Matched ``(log mu, theta)`` per original segment with their medians."""
    out = {}
    for k in sorted({m.k for m in matches}):
        ms = [m for m in matches if m.k == k]
        log_mu = np.array([m.log_mu for m in ms])
        theta = np.array([m.theta for m in ms])
        out[k] = {
            "log_mu": log_mu.tolist(),
            "theta": theta.tolist(),
            "median_log_mu": float(np.nanmedian(log_mu)) if np.isfinite(log_mu).any() else math.nan,
            "median_theta": float(np.nanmedian(theta)) if np.isfinite(theta).any() else math.nan,
        }
    return out


@dataclass(frozen=True)
class AcfResult:
    segment: int
    n: int
    acf: tuple[float, ...]
    band: float


def _acf(x: np.ndarray, max_lag: int) -> np.ndarray | None:
    d = x - x.mean()
    denom = float(np.dot(d, d))
    if denom <= 1e-12 * max(1.0, float(np.dot(x, x))):
        return None
    return np.array([np.dot(d[:-h], d[h:]) / denom for h in range(1, max_lag + 1)])


def residual_acf(tree: Tree, X: pd.DataFrame, y, dates, max_lag: int = 10) -> list[AcfResult]:
    """Autocorrelation of Pearson residuals within each segment, in filing order.

    Segments with fewer than ``max_lag + 2`` reports or constant residuals are skipped.
    """
    y = np.asarray(y, dtype=float)
    dates = pd.to_datetime(pd.Series(list(dates)))
    segments = apply_tree(tree, X)
    fits = {leaf.segment: leaf.fit for leaf in tree.leaves()}
    out = []
    for k in sorted(fits):
        rows = np.flatnonzero(segments == k)
        if rows.size < max_lag + 2:
            logger.info("segment %d: %d reports, too few for lag %d; skipped", k, rows.size, max_lag)
            continue
        rows = rows[np.argsort(dates.iloc[rows].to_numpy(), kind="stable")]
        f = fits[k]
        resid = (y[rows] - f.mu) / math.sqrt(f.mu + f.mu**2 / f.theta)
        acf = _acf(resid, max_lag)
        if acf is None:
            logger.info("segment %d: constant residuals; skipped", k)
            continue
        out.append(AcfResult(k, int(rows.size), tuple(float(a) for a in acf), 1.96 / math.sqrt(rows.size)))
    return out


def fit_diagnostics(tree: Tree, X: pd.DataFrame, y) -> pd.DataFrame:
    """Deviance per df, mean absolute error and NB-vs-Poisson AIC/BIC for each segment."""
    y = np.asarray(y)
    segments = apply_tree(tree, X)
    rows = []
    for leaf in tree.leaves():
        yy = y[segments == leaf.segment]
        f = leaf.fit
        pois = fit_poisson_intercept(yy) if yy.size and yy.sum() > 0 else None
        rows.append(
            {
                "segment": leaf.segment,
                "n": int(yy.size),
                "deviance": f.deviance,
                "df": f.df,
                "deviance_per_df": f.deviance / f.df if f.df > 0 else math.nan,
                "mae": float(np.mean(np.abs(yy - f.mu))) if yy.size else math.nan,
                "aic_nb": f.aic,
                "aic_poisson": pois.aic if pois else math.nan,
                "bic_nb": f.bic,
                "bic_poisson": pois.bic if pois else math.nan,
            }
        )
    return pd.DataFrame(rows)
