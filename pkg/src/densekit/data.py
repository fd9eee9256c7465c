"""Core record types and the line-delimited JSON readers used by the CLI.

File formats (one JSON object per line):

* passages:  ``{"id": int, "text": str, "title": str|null}``
* queries:   ``{"id": int, "text": str}``
* raw pairs: ``{"query_text": str, "positive_text": str,
                "positive_title": str|null, "negative_texts": [str, ...]}``
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DataError


@dataclass(frozen=True)
class Passage:
    id: int
    text: str
    title: str | None = None


@dataclass(frozen=True)
class Query:
    id: int
    text: str


@dataclass
class TrainPair:
    """One training example: a query, its positive passage, and optional
    hard negatives.  The positive id must not appear among the negatives."""

    query: Query
    positive: Passage
    negatives: list[Passage] = field(default_factory=list)

    def __post_init__(self):
        if any(n.id == self.positive.id for n in self.negatives):
            raise DataError(
                f"positive id {self.positive.id} also listed as a hard negative "
                f"for query {self.query.id}"
            )

    @property
    def positive_id(self) -> int:
        return self.positive.id

    @property
    def hard_negative_ids(self) -> list[int]:
        return [n.id for n in self.negatives]


def passage_input(p: Passage) -> str:
    """Text fed to the encoder / indexer for a passage: title first, then body."""
    return f"{p.title} {p.text}" if p.title else p.text


def _iter_json_lines(path: str | Path) -> Iterator[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc


def read_passages(path: str | Path) -> list[Passage]:
    out = []
    seen = set()
    for rec in _iter_json_lines(path):
        pid = int(rec["id"])
        if pid in seen:
            raise DataError(f"duplicate passage id {pid} in {path}")
        seen.add(pid)
        out.append(Passage(id=pid, text=rec["text"], title=rec.get("title")))
    return out


def read_queries(path: str | Path) -> list[Query]:
    out = []
    seen = set()
    for rec in _iter_json_lines(path):
        qid = int(rec["id"])
        if qid in seen:
            raise DataError(f"duplicate query id {qid} in {path}")
        seen.add(qid)
        out.append(Query(id=qid, text=rec["text"]))
    return out


def read_raw_pairs(path: str | Path) -> Iterator[TrainPair]:
    """Ingest raw text pairs, assigning sequential ids.

    Query ids are record indices; passage ids come from a running counter so
    every positive and negative in the file gets a distinct id.
    """
    next_pid = 0
    for i, rec in enumerate(_iter_json_lines(path)):
        neg_texts = rec.get("negative_texts") or []
        positive = Passage(id=next_pid, text=rec["positive_text"],
                           title=rec.get("positive_title"))
        negatives = [Passage(id=next_pid + 1 + j, text=t) for j, t in enumerate(neg_texts)]
        next_pid += 1 + len(neg_texts)
        yield TrainPair(query=Query(id=i, text=rec["query_text"]), positive=positive,
                        negatives=negatives)


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
