"""Multi-stage retrieval: dense cosine search, Okapi BM25, literal keyword
fallback, weighted score fusion, dedup, and reranking into a top-k bundle.

The tokenizer keeps dotted and colon-joined tokens whole so IPs, ports, and
`name:value` features survive as single searchable terms; BM25 and cosine
scores live on incomparable scales, so fusion min-max normalizes each list
before interpolating.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Optional

from .corpus import SessionStore
from .errors import EmptyIndex, RerankerUnavailable

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:[.:][a-z0-9]+)*")

STOPWORDS = frozenset("""
a about after all also an and any are as at be been being but by can could did
do does down each for from had has have he her here his how i if in into is it
its just like many may me might more most much my no not of off on only or
other our out over she should so some such than that the their them then there
these they this those to under up very was we were what when where which who
whom why will with would you your
""".split())

MODE_DENSE = "DenseOnly"
MODE_HYBRID = "Hybrid"

RERANK_CROSS_ENCODER = "CrossEncoder"
RERANK_LEXICAL = "LexicalFallback"
RERANK_OFF = "Off"


def tokenize(text: str) -> list:
    return _TOKEN_RE.findall(text.lower())


@dataclass
class RetrievalConfig:
    alpha: float = 0.5  # weight on the dense side of the interpolation
    k_dense: int = 20
    k_sparse: int = 20
    top_k: int = 8
    mode: str = MODE_HYBRID
    rerank: str = RERANK_LEXICAL
    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.top_k > self.k_dense + self.k_sparse:
            raise ValueError("top_k cannot exceed k_dense + k_sparse")


@dataclass
class Candidate:
    chunk_id: str
    dense_score: Optional[float] = None
    sparse_score: Optional[float] = None
    keyword_hit: bool = False
    fused_score: Optional[float] = None
    rerank_score: Optional[float] = None

    def to_json_obj(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "dense_score": self.dense_score,
            "sparse_score": self.sparse_score,
            "keyword_hit": self.keyword_hit,
            "fused_score": self.fused_score,
            "rerank_score": self.rerank_score,
        }


@dataclass
class EvidenceBundle:
    query: str
    mode: str
    ranked: list  # (Candidate, Chunk) pairs
    session_id: str
    degraded: bool = False

    def chunk_ids(self) -> list:
        return [chunk.chunk_id for _, chunk in self.ranked]

    def top_score(self) -> Optional[float]:
        if not self.ranked:
            return None
        cand = self.ranked[0][0]
        for score in (cand.rerank_score, cand.fused_score, cand.dense_score):
            if score is not None:
                return score
        return 1.0 if cand.keyword_hit else None

    def to_json_obj(self) -> dict:
        return {
            "query": self.query,
            "mode": self.mode,
            "session_id": self.session_id,
            "degraded": self.degraded,
            "ranked": [
                dict(candidate.to_json_obj(),
                     modality=chunk.modality, level=chunk.level, seq=chunk.seq,
                     source_uid=chunk.source_uid, text=chunk.text)
                for candidate, chunk in self.ranked
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), ensure_ascii=False)


class BM25Index:
    """Okapi BM25 over the tokenized chunk texts of one store."""

    def __init__(self, chunks, k1: float = 1.2, b: float = 0.75):
        self.chunks = list(chunks)
        self.k1 = k1
        self.b = b
        self.docs = [tokenize(c.text) for c in self.chunks]
        self.tfs = [Counter(d) for d in self.docs]
        self.df = Counter()
        for doc in self.docs:
            self.df.update(set(doc))
        self.avglen = (sum(len(d) for d in self.docs) / len(self.docs)) if self.docs else 0.0

    def score(self, query_tokens, doc_index: int) -> float:
        tf = self.tfs[doc_index]
        length = len(self.docs[doc_index])
        n = len(self.docs)
        total = 0.0
        for term in dict.fromkeys(query_tokens):  # unique terms, first-seen order
            f = tf.get(term, 0)
            if f == 0:
                continue
            idf = math.log(1 + (n - self.df[term] + 0.5) / (self.df[term] + 0.5))
            total += idf * f * (self.k1 + 1) / (
                f + self.k1 * (1 - self.b + self.b * length / self.avglen))
        return total

    def search(self, query: str, k: int) -> list:
        if not self.docs:
            raise EmptyIndex("BM25 index has no documents")
        tokens = tokenize(query)
        scored = []
        for i, chunk in enumerate(self.chunks):
            s = self.score(tokens, i)
            if s > 0.0:
                scored.append((chunk.chunk_id, s))
        scored.sort(key=lambda cs: (-cs[1], cs[0]))
        return scored[:k]


def bm25_search(query: str, store: SessionStore, cfg: RetrievalConfig) -> list:
    index = BM25Index(store.chunks, k1=cfg.bm25_k1, b=cfg.bm25_b)
    return [Candidate(chunk_id=cid, sparse_score=score)
            for cid, score in index.search(query, cfg.k_sparse)]


def dense_search(query: str, store: SessionStore, cfg: RetrievalConfig, embedder) -> list:
    """Top k_dense by dot product (cosine on unit vectors); ties by chunk_id."""
    if len(store) == 0:
        return []
    q = embedder.embed(query)
    scores = store.matrix @ q
    order = sorted(range(len(store)), key=lambda i: (-float(scores[i]), store.chunks[i].chunk_id))
    return [Candidate(chunk_id=store.chunks[i].chunk_id, dense_score=float(scores[i]))
            for i in order[:cfg.k_dense]]


def _expand_components(tokens) -> set:
    """Token set plus colon-split components, so `ip:port` exposes both parts."""
    out = set(tokens)
    for token in tokens:
        if ":" in token:
            out.update(token.split(":"))
    return out


def keyword_fallback(query: str, store: SessionStore) -> list:
    """Chunks containing any query token of length >= 3 as an exact token
    (colon-joined chunk tokens also match on their components)."""
    terms = [t for t in tokenize(query) if len(t) >= 3]
    if not terms:
        return []
    hits = []
    for chunk in store.chunks:
        chunk_tokens = _expand_components(tokenize(chunk.text))
        if any(t in chunk_tokens for t in terms):
            hits.append(Candidate(chunk_id=chunk.chunk_id, keyword_hit=True))
    return hits


def _minmax(scores: dict) -> dict:
    if not scores:
        return {}
    values = list(scores.values())
    lo, hi = min(values), max(values)
    if hi <= lo:  # singleton or all-equal list
        return {cid: 1.0 for cid in scores}
    return {cid: (s - lo) / (hi - lo) for cid, s in scores.items()}


def fuse(dense, sparse, fallback, cfg: RetrievalConfig) -> list:
    """Interpolate normalized dense/sparse scores; append score-less fallback hits."""
    merged = {}

    def slot(chunk_id):
        if chunk_id not in merged:
            merged[chunk_id] = Candidate(chunk_id=chunk_id)
        return merged[chunk_id]

    for cand in dense:
        c = slot(cand.chunk_id)
        if c.dense_score is None or cand.dense_score > c.dense_score:
            c.dense_score = cand.dense_score
    for cand in sparse:
        c = slot(cand.chunk_id)
        if c.sparse_score is None or cand.sparse_score > c.sparse_score:
            c.sparse_score = cand.sparse_score
    for cand in fallback:
        slot(cand.chunk_id).keyword_hit = True

    dense_norm = _minmax({cid: c.dense_score for cid, c in merged.items()
                          if c.dense_score is not None})
    sparse_norm = _minmax({cid: c.sparse_score for cid, c in merged.items()
                           if c.sparse_score is not None})

    scored = []
    fallback_only = []
    for cid, cand in merged.items():
        if cand.dense_score is None and cand.sparse_score is None:
            fallback_only.append(cand)
            continue
        cand.fused_score = (cfg.alpha * dense_norm.get(cid, 0.0)
                            + (1 - cfg.alpha) * sparse_norm.get(cid, 0.0))
        scored.append(cand)
    scored.sort(key=lambda c: (-c.fused_score, c.chunk_id))
    fallback_only.sort(key=lambda c: c.chunk_id)
    return scored + fallback_only


def _content_token_set(text: str) -> set:
    """Tokens that carry signal: stopwords out, short non-numeric tokens out,
    colon-joined tokens also contribute their components."""
    return {t for t in _expand_components(tokenize(text))
            if t not in STOPWORDS and (len(t) >= 3 or t.isdigit())}


class LexicalReranker:
    """Deterministic token-set F1 between query and chunk content tokens."""

    name = "lexical-f1"

    def scores(self, query: str, texts) -> list:
        q = _content_token_set(query)
        out = []
        for text in texts:
            c = _content_token_set(text)
            overlap = len(q & c)
            if not overlap or not q or not c:
                out.append(0.0)
                continue
            p = overlap / len(c)
            r = overlap / len(q)
            out.append(2 * p * r / (p + r))
        return out


class RemoteCrossEncoder:
    """HTTP reranker client: POST {endpoint}/rerank {"query","texts"} -> {"scores"}."""

    name = "remote-cross-encoder"

    def __init__(self, endpoint: str, timeout: float = 10.0, session=None):
        import requests

        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()

    def scores(self, query: str, texts) -> list:
        try:
            resp = self._session.post(f"{self.endpoint}/rerank",
                                      json={"query": query, "texts": list(texts)},
                                      timeout=self.timeout)
            resp.raise_for_status()
            scores = [float(s) for s in resp.json()["scores"]]
        except Exception as exc:
            raise RerankerUnavailable(str(exc)) from exc
        if len(scores) != len(texts):
            raise RerankerUnavailable("score count mismatch")
        return scores


def rerank(query: str, candidates, reranker, texts_by_id: dict) -> list:
    """Reorder by reranker score, descending; ties keep the prior order."""
    if len(candidates) <= 1:
        return list(candidates)
    texts = [texts_by_id[c.chunk_id] for c in candidates]
    scores = reranker.scores(query, texts)
    for cand, score in zip(candidates, scores):
        cand.rerank_score = float(score)
    return sorted(candidates, key=lambda c: -c.rerank_score)  # stable: ties keep fused order


def corpus_vocabulary(store: SessionStore) -> frozenset:
    vocab = set()
    for chunk in store.chunks:
        vocab.update(tokenize(chunk.text))
    return frozenset(vocab)


def retrieve(query: str, store: SessionStore, cfg: RetrievalConfig, embedder,
             reranker=None) -> EvidenceBundle:
    """Run the configured retrieval mode over one session store."""
    if len(store) == 0:
        raise EmptyIndex(f"session {store.session_id} has no chunks")
    chunks_by_id = {c.chunk_id: c for c in store.chunks}

    if cfg.mode == MODE_DENSE:
        candidates = dense_search(query, store, cfg, embedder)[:cfg.top_k]
        return EvidenceBundle(query=query, mode=cfg.mode, session_id=store.session_id,
                              ranked=[(c, chunks_by_id[c.chunk_id]) for c in candidates])

    dense = dense_search(query, store, cfg, embedder)
    sparse = bm25_search(query, store, cfg)
    fallback = keyword_fallback(query, store)
    candidates = fuse(dense, sparse, fallback, cfg)

    degraded = False
    if cfg.rerank != RERANK_OFF and candidates:
        reranker = reranker or LexicalReranker()
        texts_by_id = {c.chunk_id: chunks_by_id[c.chunk_id].text for c in candidates}
        try:
            candidates = rerank(query, candidates, reranker, texts_by_id)
        except RerankerUnavailable:
            degraded = True  # fall back to fused order

    candidates = candidates[:cfg.top_k]
    return EvidenceBundle(query=query, mode=cfg.mode, session_id=store.session_id,
                          ranked=[(c, chunks_by_id[c.chunk_id]) for c in candidates],
                          degraded=degraded)
