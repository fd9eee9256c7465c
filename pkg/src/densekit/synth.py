"""Synthetic retrieval benchmarks.

Each passage mixes informative "content" words drawn from a large vocabulary
with "filler" words drawn from a tiny shared vocabulary.  Queries are
word-dropout views of a passage: each token is kept with probability
1 - drop.  Fillers make raw bag-of-words similarity misleading, so an
untrained encoder does poorly and training has something real to learn, while
the gold passage is still recoverable from the content words.

Benchmarks built with different seeds but the same vocabulary parameters are
"the same domain": a model pre-trained on one transfers to another.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Passage, Query, TrainPair


@dataclass
class Benchmark:
    passages: list[Passage]
    train_pairs: list[TrainPair]     # no negatives; mine them
    eval_queries: list[Query]
    qrels: dict[int, set[int]]


def _dropout_view(words: list[str], drop: float, rng: np.random.Generator) -> str:
    keep = rng.random(len(words)) >= drop
    if not keep.any():
        keep[rng.integers(len(words))] = True
    return " ".join(w for w, k in zip(words, keep) if k)


def make_dropout_benchmark(n_passages: int = 5000, *, content_words: int = 12,
                           filler_words: int = 18, content_vocab: int = 20000,
                           filler_vocab: int = 25, drop: float = 0.3,
                           train_views: int = 1, eval_views: int = 1,
                           seed: int = 0) -> Benchmark:
    rng = np.random.default_rng(seed)
    fillers = [f"f{i:02d}" for i in range(filler_vocab)]

    passages = []
    passage_words = []
    for pid in range(n_passages):
        content = [f"w{v:05d}" for v in rng.choice(content_vocab, size=content_words,
                                                   replace=False)]
        fill = [fillers[v] for v in rng.integers(filler_vocab, size=filler_words)]
        words = content + fill
        rng.shuffle(words)
        passage_words.append(words)
        passages.append(Passage(id=pid, text=" ".join(words)))

    train_pairs = []
    qid = 0
    for pid, words in enumerate(passage_words):
        for _ in range(train_views):
            train_pairs.append(TrainPair(
                query=Query(id=qid, text=_dropout_view(words, drop, rng)),
                positive=passages[pid]))
            qid += 1

    eval_queries, qrels = [], {}
    eval_base = n_passages * train_views
    for pid, words in enumerate(passage_words):
        for _ in range(eval_views):
            q = Query(id=eval_base + len(eval_queries),
                      text=_dropout_view(words, drop, rng))
            eval_queries.append(q)
            qrels[q.id] = {pid}

    return Benchmark(passages=passages, train_pairs=train_pairs,
                     eval_queries=eval_queries, qrels=qrels)
