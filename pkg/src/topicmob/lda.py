"""Latent Dirichlet allocation fitted by variational EM.

Topic-word distributions ``beta`` are point parameters (no prior on them), the
per-document topic proportions get a symmetric Dirichlet(kappa) prior. A tiny
``kappa`` pushes every document onto essentially one topic, so the posterior
proportions can be turned into hard assignments.

Topics are numbered 1..s in every public output; topic 0 is reserved for
documents with no in-vocabulary text.
"""

from __future__ import annotations

import json
import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import special
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import DocTermCounts, Vocabulary
from .exceptions import NumericalError

logger = logging.getLogger(__name__)

BETA_FLOOR = 1e-10
NO_TEXT_TOPIC = 0
ETA_NOTE = "eta unused: topic-word distributions are point parameters"


@dataclass
class LdaModel:
    s: int
    q: int
    beta: np.ndarray
    kappa: float
    seed: int | None = None
    elbo_trace: list[float] = field(default_factory=list)
    eta_note: str = ETA_NOTE

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.shape != (self.s, self.q):
            raise ValueError(f"beta has shape {self.beta.shape}, expected {(self.s, self.q)}")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")

    def to_json(self) -> str:
        return json.dumps(
            {
                "s": self.s,
                "q": self.q,
                "kappa": self.kappa,
                "seed": self.seed,
                "eta_note": self.eta_note,
                "beta": self.beta.tolist(),
                "elbo_trace": list(self.elbo_trace),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "LdaModel":
        obj = json.loads(text)
        return cls(
            s=obj["s"],
            q=obj["q"],
            beta=np.array(obj["beta"], dtype=float),
            kappa=obj["kappa"],
            seed=obj.get("seed"),
            elbo_trace=list(obj.get("elbo_trace", [])),
        )


@dataclass(frozen=True)
class DocPosterior:
    doc_id: str
    gamma: np.ndarray
    pi_hat: np.ndarray
    hard_topic: int
    max_pi: float


class _Batch:
    """Nonempty documents flattened to CSR arrays."""

    def __init__(self, docs: Sequence[DocTermCounts]):
        self.doc_ids = [d.doc_id for d in docs]
        lengths = [len(d.indices) for d in docs]
        self.indptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        self.indices = np.fromiter((u for d in docs for u in d.indices), dtype=np.int64, count=self.indptr[-1])
        self.counts = np.fromiter((c for d in docs for c in d.counts), dtype=float, count=self.indptr[-1])
        self.doc_of = np.repeat(np.arange(len(docs)), lengths)
        self.lengths = np.array([d.length for d in docs], dtype=float)

    def __len__(self):
        return len(self.doc_ids)

    def subset(self, start: int, stop: int) -> "_Batch":
        sub = object.__new__(_Batch)
        a, b = self.indptr[start], self.indptr[stop]
        sub.doc_ids = self.doc_ids[start:stop]
        sub.indptr = self.indptr[start : stop + 1] - a
        sub.indices = self.indices[a:b]
        sub.counts = self.counts[a:b]
        sub.doc_of = self.doc_of[a:b] - start
        sub.lengths = self.lengths[start:stop]
        return sub


def _log_phi(batch: _Batch, log_beta: np.ndarray, gamma: np.ndarray):
    """Unnormalised log phi (nnz x s) and its row-wise log normaliser."""
    logits = log_beta[:, batch.indices].T + special.digamma(gamma)[batch.doc_of]
    lse = special.logsumexp(logits, axis=1)
    return logits, lse


def _gamma_update(batch: _Batch, log_beta, kappa, gamma) -> np.ndarray:
    logits, lse = _log_phi(batch, log_beta, gamma)
    weighted = batch.counts[:, None] * np.exp(logits - lse[:, None])
    return kappa + np.add.reduceat(weighted, batch.indptr[:-1], axis=0)


def _coordinate_ascent(batch: _Batch, log_beta, kappa, gamma, tol, max_iter) -> tuple[np.ndarray, int]:
    gamma = gamma.copy()
    active = np.arange(len(batch))
    it = 0
    for it in range(1, max_iter + 1):
        sub = batch if len(active) == len(batch) else _select(batch, active)
        new = _gamma_update(sub, log_beta, kappa, gamma[active])
        change = np.mean(np.abs(new - gamma[active]), axis=1)
        gamma[active] = new
        active = active[change >= tol]
        if not len(active):
            break
    return gamma, it


def _select(batch: _Batch, docs: np.ndarray) -> _Batch:
    sub = object.__new__(_Batch)
    keep = np.isin(batch.doc_of, docs)
    lengths = np.diff(batch.indptr)[docs]
    sub.doc_ids = [batch.doc_ids[i] for i in docs]
    sub.indptr = np.concatenate([[0], np.cumsum(lengths)])
    sub.indices = batch.indices[keep]
    sub.counts = batch.counts[keep]
    sub.doc_of = np.repeat(np.arange(len(docs)), lengths)
    sub.lengths = batch.lengths[docs]
    return sub


def _finalize(batch: _Batch, log_beta, kappa, gamma):
    """Optimal phi for ``gamma`` plus the per-document evidence lower bound."""
    s = log_beta.shape[0]
    logits, lse = _log_phi(batch, log_beta, gamma)
    phi = np.exp(logits - lse[:, None])
    gsum = gamma.sum(axis=1)
    dig_sum = special.digamma(gsum)
    elog = special.digamma(gamma) - dig_sum[:, None]
    # with phi at its optimum: sum_t phi (log beta + E log pi - log phi) = lse - digamma(sum gamma)
    words = np.add.reduceat(batch.counts * (lse - dig_sum[batch.doc_of]), batch.indptr[:-1])
    prior = special.gammaln(s * kappa) - s * special.gammaln(kappa) + (kappa - 1.0) * elog.sum(axis=1)
    entropy = -special.gammaln(gsum) + special.gammaln(gamma).sum(axis=1) - ((gamma - 1.0) * elog).sum(axis=1)
    return phi, words + prior + entropy


def _sstats(batch: _Batch, phi: np.ndarray, q: int) -> np.ndarray:
    s = phi.shape[1]
    out = np.zeros((s, q))
    for t in range(s):
        out[t] = np.bincount(batch.indices, weights=batch.counts * phi[:, t], minlength=q)
    return out


def _initial_gamma(batch: _Batch, s: int, kappa: float) -> np.ndarray:
    return np.repeat((kappa + batch.lengths / s)[:, None], s, axis=1)


def init_lda(corpus: Sequence[DocTermCounts], s: int, kappa: float = 0.001, seed=None, q: int | None = None) -> LdaModel:
    """Start from corpus-wide term frequencies, perturbed per topic by U(0.5, 1.5) factors."""
    if s < 1:
        raise ValueError("s must be >= 1")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    docs = [d for d in corpus if not d.is_empty]
    if not docs:
        raise ValueError("corpus has no nonempty documents")
    if q is None:
        q = 1 + max(max(d.indices) for d in docs)
    if s > len(docs):
        warnings.warn(f"{s} topics for {len(docs)} documents", stacklevel=2)
    freq = np.zeros(q)
    for d in docs:
        np.add.at(freq, list(d.indices), d.counts)
    freq = (freq + BETA_FLOOR) / (freq + BETA_FLOOR).sum()
    rng = np.random.default_rng(seed)
    beta = freq * rng.uniform(0.5, 1.5, size=(s, q))
    beta /= beta.sum(axis=1, keepdims=True)
    return LdaModel(s=s, q=q, beta=beta, kappa=float(kappa), seed=seed)


def e_step(doc: DocTermCounts, model: LdaModel, gamma0=None, tol=1e-5, max_iter=200):
    """Variational posterior of one nonempty document under fixed ``beta``.

    Returns ``(gamma, phi, bound)`` where ``phi`` has one row per distinct term
    of the document in ``doc.indices`` order.
    """
    if doc.is_empty:
        raise ValueError("document has no in-vocabulary terms")
    batch = _Batch([doc])
    log_beta = np.log(model.beta)
    g0 = _initial_gamma(batch, model.s, model.kappa) if gamma0 is None else np.atleast_2d(gamma0).astype(float)
    gamma, _ = _coordinate_ascent(batch, log_beta, model.kappa, g0, tol, max_iter)
    phi, bound = _finalize(batch, log_beta, model.kappa, gamma)
    return gamma[0], phi, float(bound[0])


def m_step(sstats: np.ndarray, floor: float = BETA_FLOOR) -> np.ndarray:
    """Row-normalise expected topic-term counts after adding ``floor`` to every cell."""
    sstats = np.asarray(sstats, dtype=float) + floor
    return sstats / sstats.sum(axis=1, keepdims=True)


def _posterior(doc_id, gamma) -> DocPosterior:
    pi = gamma / gamma.sum()
    top = int(np.argmax(pi))
    return DocPosterior(doc_id, gamma, pi, top + 1, float(pi[top]))


def fit_lda(
    corpus: Sequence[DocTermCounts],
    s: int = 100,
    kappa: float = 0.001,
    tol: float = 1e-5,
    max_iter: int = 100,
    seed=None,
    init: LdaModel | None = None,
    gamma_tol: float = 1e-5,
    gamma_max_iter: int = 200,
    chunk_size: int = 4096,
    q: int | None = None,
) -> tuple[LdaModel, list[DocPosterior]]:
    """Variational EM for LDA.

    Each E-step runs coordinate ascent per document twice, from the previous
    iteration's ``gamma`` and from the flat start, and keeps the run with the
    larger bound. The first guarantees the tracked objective never decreases;
    the second lets a document leave its current topic, which a near-zero
    ``kappa`` would otherwise prevent.

    The tracked objective is the evidence lower bound plus
    ``BETA_FLOOR * sum(log beta)``, the term that makes the floored M-step an
    exact maximiser.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    model = init if init is not None else init_lda(corpus, s, kappa, seed, q=q)
    s, kappa = model.s, model.kappa
    live = [d for d in corpus if not d.is_empty]
    if not live:
        raise ValueError("corpus has no nonempty documents")
    batch = _Batch(live)
    chunks = [batch.subset(a, min(a + chunk_size, len(batch))) for a in range(0, len(batch), chunk_size)]
    beta = model.beta.copy()
    gamma = None
    trace: list[float] = []

    for it in range(1, max_iter + 1):
        log_beta = np.log(beta)
        sstats = np.zeros_like(beta)
        total = 0.0
        new_gamma = []
        offset = 0
        for chunk in chunks:
            cold0 = _initial_gamma(chunk, s, kappa)
            g, _ = _coordinate_ascent(chunk, log_beta, kappa, cold0, gamma_tol, gamma_max_iter)
            phi, bound = _finalize(chunk, log_beta, kappa, g)
            if gamma is not None:
                warm0 = gamma[offset : offset + len(chunk)]
                gw, _ = _coordinate_ascent(chunk, log_beta, kappa, warm0, gamma_tol, gamma_max_iter)
                phi_w, bound_w = _finalize(chunk, log_beta, kappa, gw)
                use_warm = bound_w >= bound
                g = np.where(use_warm[:, None], gw, g)
                phi = np.where(use_warm[chunk.doc_of][:, None], phi_w, phi)
                bound = np.where(use_warm, bound_w, bound)
            sstats += _sstats(chunk, phi, model.q)
            total += float(bound.sum())
            new_gamma.append(g)
            offset += len(chunk)
        gamma = np.vstack(new_gamma)
        elbo = total + BETA_FLOOR * float(np.log(beta).sum())
        if not np.isfinite(elbo):
            raise NumericalError(f"non-finite ELBO at EM iteration {it}")
        trace.append(elbo)
        logger.debug("EM iteration %d: ELBO %.6f", it, elbo)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol * abs(trace[-2]):
            break
        if it < max_iter:
            beta = m_step(sstats)

    fitted = LdaModel(s=s, q=model.q, beta=beta, kappa=kappa, seed=model.seed, elbo_trace=trace)
    by_id = dict(zip(batch.doc_ids, gamma))
    posts = []
    for d in corpus:
        if d.is_empty:
            g = np.full(s, kappa)
            posts.append(DocPosterior(d.doc_id, g, g / g.sum(), NO_TEXT_TOPIC, 1.0 / s))
        else:
            posts.append(_posterior(d.doc_id, by_id[d.doc_id]))
    return fitted, posts


def infer(corpus: Sequence[DocTermCounts], model: LdaModel, tol=1e-5, max_iter=200) -> list[DocPosterior]:
    """Posteriors for (possibly new) documents under a fitted model."""
    corpus = list(corpus)
    live = [d for d in corpus if not d.is_empty]
    by_id = {}
    if live:
        batch = _Batch(live)
        g, _ = _coordinate_ascent(
            batch, np.log(model.beta), model.kappa, _initial_gamma(batch, model.s, model.kappa), tol, max_iter
        )
        by_id = dict(zip(batch.doc_ids, g))
    out = []
    for d in corpus:
        if d.is_empty:
            g = np.full(model.s, model.kappa)
            out.append(DocPosterior(d.doc_id, g, g / g.sum(), NO_TEXT_TOPIC, 1.0 / model.s))
        else:
            out.append(_posterior(d.doc_id, by_id[d.doc_id]))
    return out


def hard_assign(posteriors: Sequence[DocPosterior], topics: Sequence[int] | None = None) -> pd.DataFrame:
    """0/1 split-candidate columns ``topic_t`` for every topic holding at least one document."""
    ids = [p.doc_id for p in posteriors]
    labels = np.array([p.hard_topic for p in posteriors], dtype=int)
    if topics is None:
        topics = sorted(set(labels.tolist()))
    cols = {f"topic_{t}": (labels == t).astype(np.int8) for t in topics}
    return pd.DataFrame(cols, index=pd.Index(ids, name="doc_id"))


def topic_terms(
    model: LdaModel | None,
    corpus: Sequence[DocTermCounts],
    posteriors: Sequence[DocPosterior],
    t: int,
    k: int = 10,
    vocab: Vocabulary | None = None,
) -> tuple[list[tuple[str, int]], int]:
    """Top ``k`` terms by raw frequency in the documents hard-assigned to topic ``t``.

    Returns ``(terms, number_of_documents)``; ties are broken alphabetically.
    Without ``vocab`` the terms are reported as their integer indices.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if model is not None and not 0 <= t <= model.s:
        raise ValueError(f"topic {t} outside 0..{model.s}")
    assigned = {p.doc_id for p in posteriors if p.hard_topic == t}
    tally: Counter = Counter()
    for d in corpus:
        if d.doc_id in assigned:
            for u, c in zip(d.indices, d.counts):
                tally[u] += c
    name = (lambda u: vocab.terms[u]) if vocab is not None else (lambda u: u)
    ranked = sorted(((name(u), c) for u, c in tally.items()), key=lambda tc: (-tc[1], tc[0]))
    return ranked[:k], len(assigned)


class TopicModel(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` runs variational EM, ``transform`` yields topic dummies."""

    def __init__(self, n_topics=100, kappa=0.001, tol=1e-5, max_iter=100, random_state=None, n_terms=None):
        self.n_topics = n_topics
        self.kappa = kappa
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state
        self.n_terms = n_terms

    def fit(self, X, y=None):
        self.model_, self.posteriors_ = fit_lda(
            list(X), self.n_topics, self.kappa, self.tol, self.max_iter, seed=self.random_state, q=self.n_terms
        )
        self.topics_ = sorted({p.hard_topic for p in self.posteriors_})
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return hard_assign(infer(list(X), self.model_), topics=self.topics_)

    def fit_transform(self, X, y=None):
        self.fit(X)
        return hard_assign(self.posteriors_, topics=self.topics_)
