"""BM25 inverted index: the sparse retrieval baseline and round-1 negative miner.

Scoring uses the Lucene-style non-negative idf,

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
    score(q, p) = sum over query terms of
        idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avgdl))

with k1 = 0.9, b = 0.4 by default.  Query terms are a multiset: a term
appearing twice in the query contributes twice.  Ranking ties break by
ascending passage id.  The index is built once and is read-only afterwards.
"""
from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import Passage, TrainPair, passage_input
from .errors import DataError
from .pretrain import GenStats
from .text import split_tokens


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[int, int]]]  # term -> [(passage id, tf)], id-sorted
    doc_len: dict[int, int]
    avgdl: float
    k1: float = 0.9
    b: float = 0.4
    stopwords: frozenset[str] = frozenset()
    _arrays: dict | None = field(default=None, repr=False)

    @property
    def n_docs(self) -> int:
        return len(self.doc_len)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def terms(self, text: str) -> list[str]:
        """Normalize query or passage text under this index's rules."""
        return [t for t in split_tokens(text) if t not in self.stopwords]


def build_inverted_index(passages: Iterable[Passage], k1: float = 0.9, b: float = 0.4,
                         stopwords: Iterable[str] = ()) -> InvertedIndex:
    stopwords = frozenset(stopwords)
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_len: dict[int, int] = {}
    for p in passages:
        if p.id in doc_len:
            raise DataError(f"duplicate passage id {p.id}")
        terms = [t for t in split_tokens(passage_input(p)) if t not in stopwords]
        doc_len[p.id] = len(terms)
        counts: dict[str, int] = {}
        for t in terms:
            counts[t] = counts.get(t, 0) + 1
        for t, tf in counts.items():
            postings.setdefault(t, []).append((p.id, tf))
    for plist in postings.values():
        plist.sort()
    avgdl = sum(doc_len.values()) / len(doc_len) if doc_len else 0.0
    return InvertedIndex(postings=postings, doc_len=doc_len, avgdl=avgdl,
                         k1=k1, b=b, stopwords=stopwords)


def bm25_score(index: InvertedIndex, query_terms: Sequence[str], passage_id: int) -> float:
    if passage_id not in index.doc_len:
        raise DataError(f"passage {passage_id} not in index")
    norm = index.k1 * (1.0 - index.b + index.b * index.doc_len[passage_id] / index.avgdl)
    score = 0.0
    for t in query_terms:
        plist = index.postings.get(t)
        if not plist:
            continue
        i = bisect_left(plist, (passage_id, 0))
        if i == len(plist) or plist[i][0] != passage_id:
            continue
        tf = plist[i][1]
        score += index.idf(t) * tf * (index.k1 + 1.0) / (tf + norm)
    return score


def _build_arrays(index: InvertedIndex) -> dict:
    """Vectorized postings for fast top-k: per term, (row, tf) arrays."""
    ids = np.fromiter(index.doc_len.keys(), dtype=np.int64, count=index.n_docs)
    order = np.argsort(ids)
    ids = ids[order]
    row_of = {int(pid): i for i, pid in enumerate(ids)}
    lens = np.array([index.doc_len[int(pid)] for pid in ids], dtype=np.float64)
    norm = index.k1 * (1.0 - index.b + index.b * lens / index.avgdl) if index.avgdl else lens
    per_term = {}
    for t, plist in index.postings.items():
        rows = np.array([row_of[pid] for pid, _ in plist], dtype=np.int64)
        tfs = np.array([tf for _, tf in plist], dtype=np.float64)
        per_term[t] = (rows, tfs)
    return {"ids": ids, "norm": norm, "per_term": per_term}


def bm25_topk(index: InvertedIndex, query_terms: Sequence[str], k: int
              ) -> list[tuple[int, float]]:
    """Exact top-k of passages sharing at least one query term, ordered by
    descending score then ascending passage id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if index._arrays is None:
        index._arrays = _build_arrays(index)
    arrays = index._arrays
    scores = np.zeros(index.n_docs)
    touched = []
    for t in query_terms:
        hit = arrays["per_term"].get(t)
        if hit is None:
            continue
        rows, tfs = hit
        scores[rows] += index.idf(t) * tfs * (index.k1 + 1.0) / (tfs + arrays["norm"][rows])
        touched.append(rows)
    if not touched:
        return []
    cand = np.unique(np.concatenate(touched))
    order = np.lexsort((arrays["ids"][cand], -scores[cand]))[:k]
    picked = cand[order]
    return [(int(arrays["ids"][r]), float(scores[r])) for r in picked]


def mine_bm25_negatives(index: InvertedIndex, pairs: Iterable[TrainPair], n: int,
                        passages: Mapping[int, Passage],
                        stats: GenStats | None = None) -> list[TrainPair]:
    """Attach the top-n BM25 results (gold excluded) to each pair as hard
    negatives.  Queries with no BM25 hits keep an empty negative list and are
    counted in stats.dropped."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    stats = stats if stats is not None else GenStats()
    out = []
    for pair in pairs:
        ranked = bm25_topk(index, index.terms(pair.query.text), n + 1)
        neg_ids = [pid for pid, _ in ranked if pid != pair.positive.id][:n]
        if not neg_ids:
            stats.dropped += 1
            out.append(TrainPair(query=pair.query, positive=pair.positive))
            continue
        negatives = []
        for pid in neg_ids:
            passage = passages.get(pid)
            if passage is None:
                raise DataError(f"mined negative {pid} missing from passage pool")
            negatives.append(passage)
        stats.emitted += 1
        out.append(TrainPair(query=pair.query, positive=pair.positive, negatives=negatives))
    return out
