import itertools
import json
import math
import random

import numpy as np
import pytest
from scipy.special import digamma, gammaln

from _fixtures import best_permutation_accuracy, topic_corpus
from topicmob.corpus import DocTermCounts, Vocabulary, preprocess, to_counts
from topicmob.lda import (
    DocPosterior,
    LdaModel,
    TopicModel,
    e_step,
    fit_lda,
    hard_assign,
    infer,
    init_lda,
    m_step,
    topic_terms,
)


def doc(doc_id, counts: dict) -> DocTermCounts:
    keys = sorted(counts)
    return DocTermCounts(doc_id, tuple(keys), tuple(counts[k] for k in keys))


def assert_monotone(trace, slack=1e-8):
    assert all(b >= a - slack for a, b in zip(trace, trace[1:])), trace


def test_init_is_row_stochastic_and_deterministic():
    docs, _, _ = topic_corpus(0, n_docs=50)
    m1 = init_lda(docs, 3, seed=42)
    m2 = init_lda(docs, 3, seed=42)
    np.testing.assert_array_equal(m1.beta, m2.beta)
    np.testing.assert_allclose(m1.beta.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(m1.beta > 0)
    single = init_lda(docs, 1, seed=0)
    np.testing.assert_allclose(single.beta.sum(axis=1), 1.0, atol=1e-12)


def test_init_warns_when_topics_exceed_documents():
    with pytest.warns(UserWarning):
        init_lda([doc("a", {0: 1}), doc("b", {1: 2})], 3, seed=0)


def test_e_step_single_topic():
    m = LdaModel(s=1, q=3, beta=np.array([[0.2, 0.3, 0.5]]), kappa=0.001)
    gamma, phi, _ = e_step(doc("d", {0: 2, 2: 3}), m)
    np.testing.assert_allclose(phi, 1.0)
    assert gamma[0] == pytest.approx(0.001 + 5)


def test_e_step_degenerate_support():
    beta = np.array([[0.5, 0.5 - 1e-9, 1e-9], [1e-10, 1e-10, 1 - 2e-10]])
    m = LdaModel(s=2, q=3, beta=beta, kappa=0.001)
    gamma, phi, _ = e_step(doc("d", {2: 4}), m)
    assert int(np.argmax(gamma)) + 1 == 2
    np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-10)


def test_e_step_hand_iterated_fixed_point():
    beta = [[0.7, 0.3], [0.2, 0.8]]
    counts = [3, 2]
    kappa = 0.5
    m = LdaModel(s=2, q=2, beta=np.array(beta), kappa=kappa)
    # two update equations iterated in plain python
    g = [kappa + 5 / 2] * 2
    for _ in range(10_000):
        phis = []
        for u in range(2):
            w = [beta[t][u] * math.exp(digamma(g[t])) for t in range(2)]
            phis.append([x / sum(w) for x in w])
        new = [kappa + sum(counts[u] * phis[u][t] for u in range(2)) for t in range(2)]
        if max(abs(a - b) for a, b in zip(new, g)) < 1e-14:
            break
        g = new
    gamma, phi, _ = e_step(doc("d", {0: 3, 1: 2}), m, tol=1e-12, max_iter=10_000)
    np.testing.assert_allclose(gamma, g, rtol=1e-8)
    np.testing.assert_allclose(phi, phis, rtol=1e-7)


def test_e_step_rejects_empty_document():
    m = LdaModel(s=2, q=2, beta=np.full((2, 2), 0.5), kappa=0.1)
    with pytest.raises(ValueError):
        e_step(DocTermCounts("e", (), ()), m)


def test_m_step_examples():
    S = np.array([[5.0, 0.0, 0.0], [0.0, 0.0, 7.0]])
    beta = m_step(S)
    assert beta[0, 0] > 1 - 1e-9 and beta[1, 2] > 1 - 1e-9
    assert np.all(beta > 0)
    rng = np.random.default_rng(1)
    S = rng.gamma(1.0, 3.0, (4, 10))
    expected = (S + 1e-10) / (S + 1e-10).sum(axis=1)[:, None]
    np.testing.assert_allclose(m_step(S), expected, rtol=1e-14)
    np.testing.assert_allclose(m_step(S).sum(axis=1), 1.0, atol=1e-10)


def test_fit_single_topic():
    docs, _, _ = topic_corpus(1, n_docs=40)
    model, posts = fit_lda(docs, s=1, seed=0)
    assert all(p.hard_topic == 1 and p.max_pi == 1.0 for p in posts)
    assert_monotone(model.elbo_trace)


def test_fit_recovers_two_disjoint_topics():
    docs, labels, _ = topic_corpus(2, n_topics=2, q=40, n_docs=200, length=30)
    model, posts = fit_lda(docs, s=2, kappa=0.001, seed=3)
    acc = best_permutation_accuracy([p.hard_topic for p in posts], labels, 2)
    assert acc == 1.0
    assert np.median([p.max_pi for p in posts]) >= 0.95
    assert_monotone(model.elbo_trace)


def test_posterior_invariants():
    docs, _, _ = topic_corpus(4, n_docs=80)
    model, posts = fit_lda(docs, s=3, kappa=0.01, seed=1)
    np.testing.assert_allclose(model.beta.sum(axis=1), 1.0, atol=1e-10)
    for p in posts:
        assert np.all(p.gamma >= model.kappa)
        assert p.pi_hat.sum() == pytest.approx(1.0, abs=1e-10)
        assert p.hard_topic == int(np.argmax(p.pi_hat)) + 1
        assert p.max_pi == pytest.approx(p.pi_hat.max())
    for d in docs[:10]:
        _, phi, _ = e_step(d, model)
        np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-10)


def test_fit_is_reproducible_under_seed():
    docs, _, _ = topic_corpus(5, n_docs=60)
    a, pa = fit_lda(docs, s=3, seed=9)
    b, pb = fit_lda(docs, s=3, seed=9)
    np.testing.assert_array_equal(a.beta, b.beta)
    assert [p.hard_topic for p in pa] == [p.hard_topic for p in pb]


def test_empty_documents_get_no_text_topic():
    docs, _, _ = topic_corpus(6, n_docs=30)
    corpus = docs + [DocTermCounts("blank", (), ())]
    _, posts = fit_lda(corpus, s=3, seed=0)
    assert posts[-1].doc_id == "blank"
    assert posts[-1].hard_topic == 0
    assert posts[-1].max_pi == pytest.approx(1 / 3)
    assert posts[-1].pi_hat.sum() == pytest.approx(1.0)


def test_word_order_exchangeability():
    vocab = Vocabulary(tuple(sorted({*preprocess("enemy patrol fire vehicle route ied detonated")})), 1)
    words = "enemy patrol fire vehicle route ied detonated patrol fire".split()
    shuffled = words[:]
    random.Random(0).shuffle(shuffled)
    a = to_counts(preprocess(" ".join(words)), vocab, "x")
    b = to_counts(preprocess(" ".join(shuffled)), vocab, "x")
    assert a == b
    with pytest.warns(UserWarning):
        m = init_lda([a], 2, kappa=0.1, seed=0)
    ga, _, _ = e_step(a, m)
    gb, _, _ = e_step(b, m)
    np.testing.assert_array_equal(ga, gb)


def test_label_permutation_equivariance():
    docs, _, _ = topic_corpus(7, n_docs=120)
    base = init_lda(docs, 3, seed=11)
    perm = np.array([2, 0, 1])
    permuted = LdaModel(s=3, q=base.q, beta=base.beta[perm], kappa=base.kappa)
    ma, pa = fit_lda(docs, init=base)
    mb, pb = fit_lda(docs, init=permuted)
    np.testing.assert_allclose(mb.beta, ma.beta[perm], rtol=1e-8, atol=1e-12)
    # topic t in the permuted model is topic perm[t] in the original
    mapping = {t + 1: int(perm[t]) + 1 for t in range(3)}
    assert [mapping[p.hard_topic] for p in pb] == [p.hard_topic for p in pa]


def brute_force_mode(tokens, beta, kappa):
    """Majority topic of the exact posterior mode of z with fixed beta."""
    s = beta.shape[0]
    best, best_lp = None, -math.inf
    for z in itertools.product(range(s), repeat=len(tokens)):
        n_t = np.bincount(z, minlength=s)
        lp = sum(math.log(beta[t, w]) for t, w in zip(z, tokens))
        lp += gammaln(s * kappa) - gammaln(s * kappa + len(tokens))
        lp += sum(gammaln(kappa + n) - gammaln(kappa) for n in n_t)
        if lp > best_lp + 1e-12:
            best, best_lp = z, lp
    counts = np.bincount(best, minlength=s)
    return int(np.argmax(counts)) + 1


def test_small_instance_oracle_agreement():
    rng = np.random.default_rng(2024)
    beta = rng.dirichlet(np.ones(4), size=2)
    m = LdaModel(s=2, q=4, beta=beta, kappa=0.001)
    agree = 0
    for d in range(100):
        tokens = list(rng.integers(0, 4, rng.integers(1, 4)))
        counts = {}
        for w in tokens:
            counts[int(w)] = counts.get(int(w), 0) + 1
        gamma, _, _ = e_step(doc(f"d{d}", counts), m)
        agree += int(np.argmax(gamma)) + 1 == brute_force_mode(tokens, beta, 0.001)
    assert agree >= 90


def test_hard_assign_and_tie_break():
    posts = [
        DocPosterior("a", np.array([0.98, 0.02]), np.array([0.98, 0.02]), 1, 0.98),
        DocPosterior("b", np.array([0.02, 0.98]), np.array([0.02, 0.98]), 2, 0.98),
    ]
    frame = hard_assign(posts)
    assert list(frame.columns) == ["topic_1", "topic_2"]
    assert frame.loc["a", "topic_1"] == 1 and frame.loc["b", "topic_2"] == 1
    np.testing.assert_array_equal(frame.sum(axis=1).to_numpy(), 1)
    # identical topic rows give gamma ties; lowest index wins
    m = LdaModel(s=2, q=2, beta=np.full((2, 2), 0.5), kappa=0.1)
    post = infer([doc("t", {0: 1, 1: 1})], m)[0]
    np.testing.assert_allclose(post.pi_hat, [0.5, 0.5])
    assert post.hard_topic == 1


def test_hard_assign_partition_property():
    docs, _, _ = topic_corpus(8, n_docs=90)
    _, posts = fit_lda(docs, s=3, seed=2)
    frame = hard_assign(posts)
    assert int(frame.to_numpy().sum()) == len(docs)


def test_topic_terms_examples():
    vocab = Vocabulary(("fire", "tf"), 1)
    corpus = [doc("a", {0: 2}), doc("b", {0: 1, 1: 1}), doc("c", {1: 5})]
    posts = [
        DocPosterior("a", np.ones(2), np.array([1.0, 0.0]), 1, 1.0),
        DocPosterior("b", np.ones(2), np.array([1.0, 0.0]), 1, 1.0),
        DocPosterior("c", np.ones(2), np.array([0.0, 1.0]), 2, 1.0),
    ]
    terms, number = topic_terms(None, corpus, posts, 1, k=10, vocab=vocab)
    assert terms == [("fire", 3), ("tf", 1)] and number == 2
    assert topic_terms(None, corpus, posts, 1, k=1, vocab=vocab)[0] == [("fire", 3)]
    assert topic_terms(None, corpus, posts, 5, vocab=vocab) == ([], 0)


def test_topic_terms_matches_brute_force_tally():
    docs, _, _ = topic_corpus(10, n_docs=100)
    model, posts = fit_lda(docs, s=3, seed=0)
    for t in (1, 2, 3):
        tally = {}
        ids = {p.doc_id for p in posts if p.hard_topic == t}
        for d in docs:
            if d.doc_id in ids:
                for u, c in d.entries:
                    tally[u] = tally.get(u, 0) + c
        expected = sorted(tally.items(), key=lambda kv: (-kv[1], kv[0]))[:10]
        assert topic_terms(model, docs, posts, t) == (expected, len(ids))


def test_model_json_round_trip():
    docs, _, _ = topic_corpus(11, n_docs=40)
    model, _ = fit_lda(docs, s=2, seed=1)
    back = LdaModel.from_json(model.to_json())
    np.testing.assert_array_equal(back.beta, model.beta)
    assert back.elbo_trace == model.elbo_trace
    assert back.kappa == model.kappa and back.seed == model.seed
    assert "eta" in json.loads(model.to_json())["eta_note"]


def test_topic_model_estimator():
    docs, labels, _ = topic_corpus(12, n_docs=90)
    est = TopicModel(n_topics=3, random_state=0)
    dummies = est.fit_transform(docs)
    assert dummies.shape == (90, len(est.topics_))
    assert est.get_params()["n_topics"] == 3
    assert best_permutation_accuracy([p.hard_topic for p in est.posteriors_], labels, 3) >= 0.95
