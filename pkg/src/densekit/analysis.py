"""Question-bank overlap analysis: verbatim match rate, word-level edit
distance to the nearest bank question, and the 2x2 comparison of two runs
stratified by whether each hits at k.

Normalization for both the verbatim check and distance tokenization:
lowercase, strip terminal punctuation, collapse whitespace.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .bm25 import InvertedIndex, bm25_topk, build_inverted_index
from .data import Passage
from .errors import DataError
from .evaluation import recall_at_k
from .pretrain import GenStats

_TERMINAL_PUNCT = re.compile(r"[.!?]+$")
_WS = re.compile(r"\s+")


def normalize_question(text: str) -> str:
    text = _WS.sub(" ", text.strip().lower())
    return _TERMINAL_PUNCT.sub("", text).strip()


def question_words(text: str) -> list[str]:
    norm = normalize_question(text)
    return norm.split(" ") if norm else []


def verbatim_overlap(test_queries: Sequence[str], bank: Sequence[str]) -> float:
    """Fraction of test queries whose normalized text appears in the bank."""
    if not test_queries or not bank:
        raise DataError("verbatim overlap needs non-empty query set and bank")
    bank_set = {normalize_question(q) for q in bank}
    hits = sum(1 for q in test_queries if normalize_question(q) in bank_set)
    return hits / len(test_queries)


def word_levenshtein(a: str, b: str) -> int:
    """Edit distance over normalized word tokens, unit insert/delete/substitute."""
    wa, wb = question_words(a), question_words(b)
    if not wa:
        return len(wb)
    if not wb:
        return len(wa)
    prev = list(range(len(wb) + 1))
    for i, wa_i in enumerate(wa, start=1):
        cur = [i] + [0] * len(wb)
        for j, wb_j in enumerate(wb, start=1):
            cost = 0 if wa_i == wb_j else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1]


def build_bank_index(bank: Sequence[str], k1: float = 0.9, b: float = 0.4) -> InvertedIndex:
    """BM25 index over the question bank, one pseudo-passage per question."""
    return build_inverted_index(
        (Passage(id=i, text=q) for i, q in enumerate(bank)), k1=k1, b=b)


def min_distance_to_bank(test_query: str, bank: Sequence[str],
                         bank_index: InvertedIndex, shortlist: int,
                         stats: GenStats | None = None) -> int:
    """Shortlist the bank by BM25, then take the minimum word edit distance
    over the shortlist.  An empty shortlist falls back to the all-insertions
    bound (the query's own length) and is counted in stats.dropped."""
    if shortlist < 1:
        raise ValueError(f"shortlist must be >= 1, got {shortlist}")
    ranked = bm25_topk(bank_index, bank_index.terms(test_query), shortlist)
    if not ranked:
        if stats is not None:
            stats.dropped += 1
        return len(question_words(test_query))
    return min(word_levenshtein(test_query, bank[pid]) for pid, _ in ranked)


@dataclass
class StratifiedCells:
    """2x2 mean-distance matrix keyed by (model A hit at k, model B hit at k).
    Cells with no queries are absent.  Counts always partition the query set."""

    cells: dict[tuple[bool, bool], tuple[float, int]]
    k: int
    total: int


def stratified_comparison(run_a: Mapping[int, Sequence[int]],
                          run_b: Mapping[int, Sequence[int]],
                          qrels: Mapping[int, set[int]], k: int,
                          distances: Mapping[int, int]) -> StratifiedCells:
    if set(run_a) != set(run_b):
        raise DataError("runs cover different query sets")
    sums: dict[tuple[bool, bool], list[float]] = {}
    for qid in run_a:
        relevant = qrels.get(qid)
        if relevant is None:
            raise DataError(f"query {qid} missing from qrels")
        if qid not in distances:
            raise DataError(f"query {qid} missing from distances")
        key = (bool(recall_at_k(run_a[qid], relevant, k)),
               bool(recall_at_k(run_b[qid], relevant, k)))
        sums.setdefault(key, []).append(distances[qid])
    cells = {key: (sum(vals) / len(vals), len(vals)) for key, vals in sums.items()}
    return StratifiedCells(cells=cells, k=k, total=len(run_a))


def format_stratified(result: StratifiedCells, label_a: str = "A",
                      label_b: str = "B") -> str:
    """Text 2x2 table (rows: model A hit/miss, cols: model B) plus
    machine-readable lines."""
    def cell(a_hit: bool, b_hit: bool) -> str:
        got = result.cells.get((a_hit, b_hit))
        return f"{got[0]:.2f} (n={got[1]})" if got else "-"

    k = result.k
    head = f"{'':16} {label_b} hit@{k:<6} {label_b} miss@{k}"
    lines = [
        head,
        f"{label_a} hit@{k:<8} {cell(True, True):>14} {cell(True, False):>14}",
        f"{label_a} miss@{k:<7} {cell(False, True):>14} {cell(False, False):>14}",
        "",
    ]
    for (a_hit, b_hit), (mean, count) in sorted(result.cells.items(), reverse=True):
        tag = f"a_{'hit' if a_hit else 'miss'}_b_{'hit' if b_hit else 'miss'}"
        lines.append(f"{tag}_mean={mean:.6f}")
        lines.append(f"{tag}_count={count}")
    lines.append(f"total={result.total}")
    return "\n".join(lines)
