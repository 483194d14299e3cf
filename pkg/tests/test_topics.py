import math

import numpy as np
import pytest
from scipy import sparse

from psychdepth.protocol import ConversationLog, Utterance
from psychdepth.topics import (
    Corpus,
    Document,
    KTooLarge,
    TopicModel,
    cluster,
    ctf_idf_keywords,
    default_k,
    extract_utterances,
    fit_topics,
    tokenize,
    top_topics_per_model,
    vectorize,
)


def make_log(session, model="m", texts=None):
    log = ConversationLog(session, model, 0)
    turn = 0
    for theme in range(1, 37):
        for agent in "AB":
            text = texts(theme, agent) if texts else f"theme{theme} answer from {agent} about topic{theme % 5}"
            log.utterances.append(Utterance(theme, agent, text, turn))
            turn += 1
    return log


def corpus_of(*texts, model="m"):
    docs = [Document(f"d{i}", model, "s", "A", i + 1, t) for i, t in enumerate(texts)]
    vocab = sorted({tok for d in docs for tok in tokenize(d.text)})
    return Corpus(docs, {t: i for i, t in enumerate(vocab)})


def cos(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_tokenize_strips_punctuation_and_stopwords():
    assert tokenize("You're a 30-year-old DREAMER, aren't you?") == ["30yearold", "dreamer"]


def test_extract_counts():
    corpus = extract_utterances([make_log(f"s{i}") for i in range(20)])
    assert len(corpus) == 1440
    assert extract_utterances([]).documents == []


def test_extract_ten_models():
    logs = [make_log(f"{m}-{i}", model=f"model{m}") for m in range(10) for i in range(20)]
    assert len(extract_utterances(logs)) == 14400


def test_vocabulary_dense():
    corpus = extract_utterances([make_log("s0")])
    assert sorted(corpus.vocabulary.values()) == list(range(len(corpus.vocabulary)))


def test_identical_documents_identical_vectors():
    v = vectorize(corpus_of("cats purr softly", "cats purr softly", "dogs bark")).toarray()
    assert np.array_equal(v[0], v[1])
    assert cos(v[0], v[1]) == pytest.approx(1.0)


def test_disjoint_documents_orthogonal():
    v = vectorize(corpus_of("cats purr softly", "rockets launch quickly")).toarray()
    assert cos(v[0], v[1]) == 0.0


def test_vectors_unit_norm_and_empty_zero():
    v = vectorize(corpus_of("cats purr", "the and of", "dogs bark")).toarray()
    assert np.linalg.norm(v[0]) == pytest.approx(1.0)
    assert not v[1].any()


def test_tfidf_idf_formula():
    v = vectorize(corpus_of("alpha beta", "alpha")).toarray()
    corpus = corpus_of("alpha beta", "alpha")
    a, b = corpus.vocabulary["alpha"], corpus.vocabulary["beta"]
    raw = np.array([math.log(1 + 2 / 2), math.log(1 + 2 / 1)])
    expected = raw / np.linalg.norm(raw)
    assert v[0, a] == pytest.approx(expected[0])
    assert v[0, b] == pytest.approx(expected[1])
    assert v[1, a] == pytest.approx(1.0)


def test_vectorize_deterministic():
    corpus = extract_utterances([make_log("s0"), make_log("s1")])
    a, b = vectorize(corpus), vectorize(corpus)
    assert (a != b).nnz == 0


def test_remote_embedding_uses_gateway():
    calls = []

    class FakeGateway:
        def embed(self, model_id, texts):
            calls.append((model_id, list(texts)))
            return [[float(len(t)), 1.0] for t in texts]

    v = vectorize(corpus_of("cats purr", "dogs bark loudly", "the"), "remote_embedding", FakeGateway(), "emb")
    assert calls[0][0] == "emb" and len(calls[0][1]) == 3
    assert np.linalg.norm(v[0]) == pytest.approx(1.0)
    assert not v[2].any()


def test_cluster_k1():
    v = vectorize(corpus_of("cats purr", "dogs bark", "fish swim"))
    assert set(cluster(v, 1, seed=0)) == {0}


def test_cluster_k_too_large():
    v = vectorize(corpus_of("cats purr", "dogs bark", "the"))
    with pytest.raises(KTooLarge):
        cluster(v, 3, seed=0)


def test_cluster_recovers_disjoint_groups():
    texts = ["cats purr softly", "cats purr loudly", "softly purr cats",
             "rockets launch fast", "rockets launch slowly", "fast rockets launch"]
    v = vectorize(corpus_of(*texts))
    for seed in range(10):
        labels = cluster(v, 2, seed=seed)
        assert len(set(labels[:3])) == 1 and len(set(labels[3:])) == 1
        assert labels[0] != labels[3]
        # brute-force nearest-centroid check
        dense = v.toarray()
        cents = [dense[labels == c].sum(axis=0) for c in (0, 1)]
        cents = [c / np.linalg.norm(c) for c in cents]
        for row, lab in zip(dense, labels):
            assert int(np.argmax([row @ c for c in cents])) == lab


def test_cluster_duplicates_coassigned():
    corpus = extract_utterances([make_log("s0")])
    docs = corpus.documents + [Document(d.doc_id + "x", d.model_id, d.session_id, d.agent, d.theme_index, d.text)
                               for d in corpus.documents]
    doubled = Corpus(docs, corpus.vocabulary)
    labels = cluster(vectorize(doubled), 6, seed=3)
    n = len(corpus.documents)
    assert np.array_equal(labels[:n], labels[n:])


def test_cluster_deterministic():
    corpus = extract_utterances([make_log("s0"), make_log("s1")])
    v = vectorize(corpus)
    assert np.array_equal(cluster(v, 5, seed=7), cluster(v, 5, seed=7))


def test_ctf_idf_hand_example():
    corpus = corpus_of("alpha alpha beta", "gamma")
    kw = ctf_idf_keywords(corpus, {"d0": 0, "d1": 1})
    assert kw[0][0][0] == "alpha"
    assert kw[0][0][1] == pytest.approx(2 * math.log(2))


def test_ctf_idf_single_cluster_is_tf_order():
    corpus = corpus_of("beta beta beta alpha", "alpha gamma beta", "delta")
    kw = ctf_idf_keywords(corpus, {"d0": 0, "d1": 0, "d2": 0})
    assert [t for t, _ in kw[0]] == ["beta", "alpha", "delta", "gamma"]


def test_ctf_idf_document_order_invariant():
    a = corpus_of("alpha beta", "beta gamma", "delta")
    b = corpus_of("beta gamma", "alpha beta", "delta")
    ka = ctf_idf_keywords(a, {"d0": 0, "d1": 0, "d2": 1})
    kb = ctf_idf_keywords(b, {"d0": 0, "d1": 0, "d2": 1})
    assert ka == kb


def test_ctf_idf_top_n_limit():
    corpus = corpus_of(" ".join(f"word{i}" for i in range(30)))
    assert len(ctf_idf_keywords(corpus, {"d0": 0})[0]) == 10


def test_default_k():
    assert default_k(14400) == 200
    assert default_k(1440) == 20
    assert default_k(10) == 2


def test_fit_counts_conserved_and_empties_tallied():
    texts = lambda theme, agent: "the and of" if theme == 5 else f"subject{theme % 4} reply{agent} note{theme}"
    logs = [make_log("s0", "m1", texts), make_log("s1", "m2")]
    corpus = extract_utterances(logs)
    model = fit_topics(corpus, k=4, seed=1)
    assert model.excluded_per_model() == {"m1": 2}
    assert len(model.assignments) == len(corpus) - 2
    for mid, expected in (("m1", 70), ("m2", 72)):
        assert sum(c for (m, _), c in model.counts.items() if m == mid) == expected
    for centroid in model.centroids.values():
        assert np.linalg.norm(centroid) == pytest.approx(1.0)
    assert all(len(kw) <= 10 for kw in model.keywords.values())


def test_fit_is_reproducible():
    corpus = extract_utterances([make_log("s0"), make_log("s1")])
    a, b = fit_topics(corpus, k=4, seed=2), fit_topics(corpus, k=4, seed=2)
    assert a.assignments == b.assignments and a.keywords == b.keywords


def toy_model(counts, themes=None):
    assignments, doc_models, doc_themes = {}, {}, {}
    i = 0
    for (model_id, cid), n in counts.items():
        for _ in range(n):
            doc = f"d{i}"
            assignments[doc], doc_models[doc] = cid, model_id
            doc_themes[doc] = themes(cid, i) if themes else i
            i += 1
    return TopicModel(assignments, {}, {}, dict(counts), doc_models, doc_themes)


def test_top_topics_ranked_by_count():
    ranks = top_topics_per_model(toy_model({("m", 0): 2, ("m", 1): 5, ("m", 2): 3}))["m"]
    assert [(r.cluster_id, r.count) for r in ranks] == [(1, 5), (2, 3), (0, 2)]


def test_top_topics_tie_lower_id_first():
    ranks = top_topics_per_model(toy_model({("m", 4): 3, ("m", 2): 3}))["m"]
    assert [r.cluster_id for r in ranks] == [2, 4]


def test_dominant_theme_annotation():
    model = toy_model({("m", 0): 10}, themes=lambda cid, i: 3 if i < 8 else 7)
    rank = top_topics_per_model(model)["m"][0]
    assert rank.dominant_theme == 3
    assert rank.label.endswith("(Theme 3)")


def test_no_dominant_theme_when_spread():
    model = toy_model({("m", 0): 10})
    assert top_topics_per_model(model)["m"][0].dominant_theme is None
