"""Data generators shared by the test modules."""

from __future__ import annotations

import itertools

import numpy as np
import pandas as pd

from topicmob.corpus import DocTermCounts


def planted_tree_data(seed, n=6000, theta=1.0):
    """Binary v1 splits first; v2 splits the v1=1 branch. Means 0.2 / 1 / 5.

    Four binary and four categorical noise candidates ride along.
    """
    rng = np.random.default_rng(seed)
    v1 = rng.integers(0, 2, n)
    v2 = rng.integers(0, 2, n)
    mu = np.where(v1 == 0, 0.2, np.where(v2 == 0, 1.0, 5.0))
    y = rng.poisson(mu * rng.gamma(theta, 1.0 / theta, n))
    X = pd.DataFrame({"v1": v1, "v2": v2})
    for j in range(4):
        X[f"b{j}"] = rng.integers(0, 2, n)
    for j, L in enumerate((3, 5, 8, 12)):
        X[f"c{j}"] = [f"L{i}" for i in rng.integers(0, L, n)]
    return X, y


def null_tree_data(seed, n=2000, mu=1.0, theta=1.0):
    """A single NB population with ten uninformative candidates."""
    rng = np.random.default_rng(seed)
    y = rng.poisson(mu * rng.gamma(theta, 1.0 / theta, n))
    X = pd.DataFrame({f"b{j}": rng.integers(0, 2, n) for j in range(5)})
    for j, L in enumerate((3, 4, 6, 8, 10)):
        X[f"c{j}"] = [f"L{i}" for i in rng.integers(0, L, n)]
    return X, y


def is_planted_structure(tree) -> bool:
    r = tree.root
    return (
        not r.is_leaf
        and r.split.variable == "v1"
        and r.left.is_leaf
        and not r.right.is_leaf
        and r.right.split.variable == "v2"
        and r.right.left.is_leaf
        and r.right.right.is_leaf
    )


def topic_corpus(seed, n_topics=3, q=60, n_docs=300, length=50, kappa_doc=None):
    """Documents drawn from disjoint-vocabulary topics; returns ``(docs, labels, beta)``."""
    rng = np.random.default_rng(seed)
    block = q // n_topics
    beta = np.zeros((n_topics, q))
    for t in range(n_topics):
        w = rng.uniform(0.5, 1.5, block)
        beta[t, t * block : (t + 1) * block] = w / w.sum()
    labels = rng.integers(0, n_topics, n_docs)
    docs = []
    for d, t in enumerate(labels):
        words = rng.choice(q, size=length, p=beta[t])
        u, c = np.unique(words, return_counts=True)
        docs.append(DocTermCounts(f"d{d}", tuple(int(i) for i in u), tuple(int(i) for i in c)))
    return docs, labels, beta


def best_permutation_accuracy(pred, truth, n_topics) -> float:
    """Hard-assignment accuracy maximised over relabelings (pred is 1-based)."""
    pred = np.asarray(pred) - 1
    truth = np.asarray(truth)
    best = 0.0
    for perm in itertools.permutations(range(n_topics)):
        best = max(best, float(np.mean(np.asarray(perm)[pred] == truth)))
    return best
