"""Pre-training pair corpora: inverse-cloze pairs, first-paragraph pairs,
question-answer ingestion, and dialogue post-comment ingestion.

All generators are deterministic streams given their seed and count what they
skip or drop into a GenStats passed by the caller.  Input files are
line-delimited JSON:

* documents: ``{"id": int, "title": str|null, "paragraphs": [str, ...]}``
* QA records: ``{"question": str, "answer": str, "passage_id": int}``
* dialogue threads: ``{"context": [str, ...], "response": str}``
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .data import Passage, Query, TrainPair, _iter_json_lines
from .errors import DataError
from .text import TURN_SEP, split_sentences


@dataclass
class GenStats:
    emitted: int = 0
    skipped: int = 0
    dropped: int = 0


@dataclass(frozen=True)
class Document:
    id: int
    paragraphs: tuple[str, ...]
    title: str | None = None

    def __post_init__(self):
        if not self.paragraphs or any(not p.strip() for p in self.paragraphs):
            raise DataError(f"document {self.id} has empty paragraphs")


@dataclass(frozen=True)
class QARecord:
    question: str
    answer: str
    source_passage_id: int


def read_documents(path: str | Path) -> list[Document]:
    out = []
    for rec in _iter_json_lines(path):
        out.append(Document(id=int(rec["id"]), title=rec.get("title"),
                            paragraphs=tuple(rec["paragraphs"])))
    return out


def read_qa_records(path: str | Path) -> Iterator[QARecord]:
    for rec in _iter_json_lines(path):
        yield QARecord(question=rec["question"], answer=rec.get("answer", ""),
                       source_passage_id=int(rec["passage_id"]))


def read_dialogue_threads(path: str | Path) -> Iterator[tuple[list[str], str]]:
    for rec in _iter_json_lines(path):
        yield list(rec["context"]), rec["response"]


def gen_ict(docs: Iterable[Document], keep_prob: float, seed: int,
            stats: GenStats | None = None) -> Iterator[TrainPair]:
    """Inverse-cloze pairs: each sentence of a paragraph becomes a pseudo-query
    whose positive is that paragraph, with the sentence removed with
    probability 1 - keep_prob.

    Paragraphs with fewer than two sentences are skipped (removing the only
    sentence would leave an empty positive).
    """
    if not 0.0 <= keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in [0, 1], got {keep_prob}")
    stats = stats if stats is not None else GenStats()
    rng = np.random.default_rng(seed)
    next_id = 0
    for doc in docs:
        for paragraph in doc.paragraphs:
            sentences = split_sentences(paragraph)
            if len(sentences) < 2:
                stats.skipped += 1
                continue
            for si, sentence in enumerate(sentences):
                if rng.random() < keep_prob:
                    positive_text = paragraph
                else:
                    positive_text = " ".join(s for j, s in enumerate(sentences) if j != si)
                pair = TrainPair(
                    query=Query(id=next_id, text=sentence),
                    positive=Passage(id=next_id, text=positive_text, title=doc.title),
                )
                next_id += 1
                stats.emitted += 1
                yield pair


def gen_bfs(docs: Iterable[Document], seed: int,
            stats: GenStats | None = None) -> Iterator[TrainPair]:
    """First-paragraph pairs: one sentence sampled from a document's body is
    the query; the document's first paragraph is the positive.  Documents with
    a single paragraph contribute nothing."""
    stats = stats if stats is not None else GenStats()
    rng = np.random.default_rng(seed)
    next_id = 0
    for doc in docs:
        if len(doc.paragraphs) < 2:
            stats.skipped += 1
            continue
        body_sentences = [s for p in doc.paragraphs[1:] for s in split_sentences(p)]
        if not body_sentences:
            stats.skipped += 1
            continue
        sentence = body_sentences[rng.integers(len(body_sentences))]
        yield TrainPair(
            query=Query(id=next_id, text=sentence),
            positive=Passage(id=next_id, text=doc.paragraphs[0], title=doc.title),
        )
        next_id += 1
        stats.emitted += 1


def ingest_qa_pairs(records: Iterable[QARecord], passages: Mapping[int, Passage],
                    stats: GenStats | None = None) -> Iterator[TrainPair]:
    """Question retrieval pairs: the question is the query, the passage it was
    generated from is the positive.  Records whose passage id does not resolve
    are dropped and counted.  Hard negatives stay empty; mining fills them."""
    stats = stats if stats is not None else GenStats()
    for i, rec in enumerate(records):
        positive = passages.get(rec.source_passage_id)
        if positive is None:
            stats.dropped += 1
            continue
        stats.emitted += 1
        yield TrainPair(query=Query(id=i, text=rec.question), positive=positive)


def ingest_dialogue(threads: Iterable[tuple[list[str], str]],
                    stats: GenStats | None = None) -> Iterator[TrainPair]:
    """Post-comment pairs: the concatenated context turns form the query, the
    response is the positive.  Query-side tokenization later keeps the suffix,
    so long histories lose their oldest turns."""
    stats = stats if stats is not None else GenStats()
    next_id = 0
    for context, response in threads:
        if not context:
            raise DataError("dialogue thread with no context turns")
        if not response.strip():
            stats.dropped += 1
            continue
        sep = f" {TURN_SEP} "
        yield TrainPair(
            query=Query(id=next_id, text=sep.join(context)),
            positive=Passage(id=next_id, text=response),
        )
        next_id += 1
        stats.emitted += 1
