"""Topic analysis of generated answers.

Utterances are vectorized (TF-IDF by default, or a remote embedding model),
clustered with spherical k-means and labelled with class-based TF-IDF
keywords. Topic frequencies are then counted per model.
"""
from __future__ import annotations

import math
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import sparse

from .protocol import ConversationLog

EMBEDDERS = ("tfidf_fallback", "remote_embedding")
DEFAULT_MAX_K = 200
DOCS_PER_TOPIC = 72
DOMINANT_SHARE = 0.5


class TopicError(Exception):
    pass


class KTooLarge(TopicError):
    pass


class EmptyCorpus(TopicError):
    pass


@dataclass(frozen=True)
class Document:
    doc_id: str
    model_id: str
    session_id: str
    agent: str
    theme_index: int
    text: str


@dataclass
class Corpus:
    documents: list[Document] = field(default_factory=list)
    vocabulary: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.documents)

    def tokens(self, doc: Document) -> list[str]:
        return tokenize(doc.text)


@dataclass
class TopicModel:
    assignments: dict[str, int]
    centroids: dict[int, np.ndarray]
    keywords: dict[int, list[tuple[str, float]]]
    counts: dict[tuple[str, int], int]
    doc_models: dict[str, str] = field(default_factory=dict)
    doc_themes: dict[str, int] = field(default_factory=dict)
    excluded: list[str] = field(default_factory=list)

    def excluded_per_model(self) -> dict[str, int]:
        return dict(Counter(self.doc_models[d] for d in self.excluded))

    def dominant_theme(self, cluster_id: int, share: float = DOMINANT_SHARE) -> Optional[int]:
        themes = [self.doc_themes[d] for d, c in self.assignments.items() if c == cluster_id]
        if not themes:
            return None
        (theme, count), = sorted(Counter(themes).items(), key=lambda kv: (-kv[1], kv[0]))[:1]
        return theme if count / len(themes) >= share else None


@dataclass(frozen=True)
class TopicRank:
    cluster_id: int
    count: int
    dominant_theme: Optional[int]
    keywords: tuple[str, ...]

    @property
    def label(self) -> str:
        words = ", ".join(self.keywords[:4])
        return f"{words} (Theme {self.dominant_theme})" if self.dominant_theme is not None else words


@lru_cache(maxsize=1)
def stopwords() -> frozenset:
    text = resources.files("psychdepth").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#"))


def tokenize(text: str) -> list[str]:
    """Lowercase, delete Unicode punctuation, split on whitespace, drop stop words."""
    lowered = unicodedata.normalize("NFKC", text).lower()
    cleaned = "".join(" " if unicodedata.category(ch).startswith(("Z", "C")) else ch for ch in lowered
                      if not unicodedata.category(ch).startswith(("P", "S")))
    stop = stopwords()
    return [tok for tok in cleaned.split() if tok not in stop]


def extract_utterances(logs: Iterable[ConversationLog]) -> Corpus:
    """One document per (session, agent, theme); only generated answers are kept."""
    docs = []
    for log in logs:
        for u in log.utterances:
            doc_id = f"{log.session_id}/{u.agent}/{u.theme_index}"
            docs.append(Document(doc_id, log.model_id, log.session_id, u.agent, u.theme_index, u.text))
    vocab = sorted({tok for d in docs for tok in tokenize(d.text)})
    return Corpus(docs, {tok: i for i, tok in enumerate(vocab)})


def _tfidf(corpus: Corpus) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    for r, doc in enumerate(corpus.documents):
        for tok, count in sorted(Counter(tokenize(doc.text)).items()):
            col = corpus.vocabulary.get(tok)
            if col is not None:
                rows.append(r)
                cols.append(col)
                vals.append(float(count))
    n, v = len(corpus.documents), len(corpus.vocabulary)
    tf = sparse.csr_matrix((vals, (rows, cols)), shape=(n, v), dtype=float)
    df = np.bincount(np.asarray(cols, dtype=np.int64), minlength=v).astype(float)
    idf = np.log1p(n / np.maximum(df, 1.0))
    return tf @ sparse.diags(idf)


def _normalize_rows(matrix):
    if sparse.issparse(matrix):
        norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=1)).ravel())
        scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        return sparse.csr_matrix(sparse.diags(scale) @ matrix)
    norms = np.linalg.norm(matrix, axis=1)
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    return matrix * scale[:, None]


def vectorize(
    corpus: Corpus,
    embedder: str = "tfidf_fallback",
    gateway=None,
    embedding_model: str = "",
    batch_size: int = 64,
):
    """One L2-normalized row per document; empty documents get a zero row.

    ``tfidf_fallback`` returns a scipy CSR matrix, ``remote_embedding`` a
    dense array built from ``gateway.embed`` calls.
    """
    if not corpus.documents:
        raise EmptyCorpus("cannot vectorize an empty corpus")
    if embedder == "tfidf_fallback":
        return _normalize_rows(_tfidf(corpus))
    if embedder == "remote_embedding":
        if gateway is None:
            raise TopicError("remote_embedding needs a gateway")
        rows = []
        texts = [d.text for d in corpus.documents]
        for start in range(0, len(texts), batch_size):
            rows.extend(gateway.embed(embedding_model, texts[start: start + batch_size]))
        matrix = np.asarray(rows, dtype=float)
        empty = np.array([not tokenize(t) for t in texts])
        matrix[empty] = 0.0
        return _normalize_rows(matrix)
    raise ValueError(f"unknown embedder {embedder!r}; expected one of {EMBEDDERS}")


def _dense_rows(vectors) -> np.ndarray:
    return vectors.toarray() if sparse.issparse(vectors) else np.asarray(vectors, dtype=float)


def nonzero_rows(vectors) -> np.ndarray:
    if sparse.issparse(vectors):
        return np.flatnonzero(np.diff(vectors.indptr) > 0)
    return np.flatnonzero(np.any(np.asarray(vectors) != 0, axis=1))


def _similarities(x, centroids: np.ndarray) -> np.ndarray:
    sims = x @ centroids.T
    return np.asarray(sims)


def _kmeans_pp(x, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    dist = 1.0 - _similarities(x, _dense_rows(x[chosen[0]: chosen[0] + 1])).ravel()
    dist = np.clip(dist, 0.0, None)
    for _ in range(1, k):
        total = dist.sum()
        if total <= 0:
            remaining = np.setdiff1d(np.arange(n), chosen)
            pick = int(remaining[rng.integers(remaining.size)])
        else:
            pick = int(rng.choice(n, p=dist / total))
        chosen.append(pick)
        new = 1.0 - _similarities(x, _dense_rows(x[pick: pick + 1])).ravel()
        dist = np.minimum(dist, np.clip(new, 0.0, None))
    return _dense_rows(x[chosen])


def _lloyd(x, centroids: np.ndarray, max_iter: int, tol: float) -> tuple[np.ndarray, float]:
    k = centroids.shape[0]
    labels = np.argmax(_similarities(x, centroids), axis=1)
    for _ in range(max_iter):
        indicator = sparse.csr_matrix(
            (np.ones(labels.size), (labels, np.arange(labels.size))), shape=(k, labels.size)
        )
        sums = np.asarray(_dense_rows(indicator @ x))
        norms = np.linalg.norm(sums, axis=1)
        updated = centroids.copy()
        filled = norms > 0
        updated[filled] = sums[filled] / norms[filled, None]
        movement = float(np.max(np.linalg.norm(updated - centroids, axis=1)))
        centroids = updated
        labels = np.argmax(_similarities(x, centroids), axis=1)
        if movement < tol:
            break
    sims = _similarities(x, centroids)
    return labels, float(sims[np.arange(labels.size), labels].sum())


def cluster(
    vectors, k: int, seed: int = 0, max_iter: int = 200, tol: float = 1e-6, n_init: int = 4
) -> np.ndarray:
    """Spherical k-means over the nonzero rows of ``vectors``.

    Runs ``n_init`` seeded restarts and keeps the one with the largest total
    cosine similarity to its centroids (first wins on ties). Returns one
    cluster id per row; zero rows get -1.
    """
    keep = nonzero_rows(vectors)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > keep.size:
        raise KTooLarge(f"k={k} but only {keep.size} non-empty documents")
    x = vectors[keep] if sparse.issparse(vectors) else np.asarray(vectors, dtype=float)[keep]
    rng = np.random.default_rng(seed)
    best_labels, best_score = None, -np.inf
    for _ in range(max(1, n_init)):
        labels, score = _lloyd(x, _kmeans_pp(x, k, rng), max_iter, tol)
        if score > best_score + 1e-9:
            best_labels, best_score = labels, score
    out = np.full(vectors.shape[0], -1, dtype=int)
    out[keep] = best_labels
    return out


def default_k(n_docs: int) -> int:
    return min(DEFAULT_MAX_K, max(2, n_docs // DOCS_PER_TOPIC))


def ctf_idf_keywords(
    corpus: Corpus, assignments: dict[str, int], top_n: int = 10
) -> dict[int, list[tuple[str, float]]]:
    """Rank tokens per cluster by tf_c * ln(1 + A / f), A the mean tokens per cluster."""
    per_cluster: dict[int, Counter] = defaultdict(Counter)
    for doc in corpus.documents:
        if doc.doc_id in assignments:
            per_cluster[assignments[doc.doc_id]].update(tokenize(doc.text))
    if not per_cluster:
        return {}
    overall: Counter = Counter()
    for counts in per_cluster.values():
        overall.update(counts)
    avg = sum(overall.values()) / len(per_cluster)
    keywords = {}
    for cid in sorted(per_cluster):
        scored = [(tok, tf * math.log1p(avg / overall[tok])) for tok, tf in per_cluster[cid].items()]
        scored.sort(key=lambda kv: (-kv[1], kv[0]))
        keywords[cid] = scored[:top_n]
    return keywords


def fit_topics(
    corpus: Corpus,
    k: Optional[int] = None,
    seed: int = 0,
    embedder: str = "tfidf_fallback",
    gateway=None,
    embedding_model: str = "",
    top_n: int = 10,
) -> TopicModel:
    vectors = vectorize(corpus, embedder, gateway, embedding_model)
    keep = nonzero_rows(vectors)
    if keep.size == 0:
        raise EmptyCorpus("every document is empty after tokenization")
    k = min(default_k(len(corpus)) if k is None else k, keep.size)
    labels = cluster(vectors, k, seed)
    dense = _dense_rows(vectors[keep]) if sparse.issparse(vectors) else np.asarray(vectors)[keep]
    assignments, excluded, counts = {}, [], Counter()
    for doc, label in zip(corpus.documents, labels):
        if label < 0:
            excluded.append(doc.doc_id)
            continue
        assignments[doc.doc_id] = int(label)
        counts[(doc.model_id, int(label))] += 1
    centroids = {}
    kept_labels = labels[keep]
    for c in sorted(set(kept_labels.tolist())):
        total = dense[kept_labels == c].sum(axis=0)
        centroids[c] = total / np.linalg.norm(total)
    return TopicModel(
        assignments=assignments,
        centroids=centroids,
        keywords=ctf_idf_keywords(corpus, assignments, top_n),
        counts=dict(counts),
        doc_models={d.doc_id: d.model_id for d in corpus.documents},
        doc_themes={d.doc_id: d.theme_index for d in corpus.documents},
        excluded=excluded,
    )


def top_topics_per_model(model: TopicModel, m: int = 10) -> dict[str, list[TopicRank]]:
    by_model: dict[str, list[tuple[int, int]]] = defaultdict(list)
    for (model_id, cid), count in model.counts.items():
        by_model[model_id].append((cid, count))
    out = {}
    for model_id in sorted(by_model):
        ranked = sorted(by_model[model_id], key=lambda cc: (-cc[1], cc[0]))[:m]
        out[model_id] = [
            TopicRank(cid, count, model.dominant_theme(cid), tuple(t for t, _ in model.keywords.get(cid, [])))
            for cid, count in ranked
        ]
    return out
