"""Retrieval metrics and run-file evaluation.

Run files are whitespace-delimited lines ``query_id passage_id rank score``
with contiguous ranks 1..n per query; qrels files are ``query_id passage_id``
lines.  Metrics are macro-averaged (mean of per-query values).  Queries that
appear in the qrels but not in the run score zero and are counted; a run
query missing from the qrels is a hard error, since it usually means the ids
are misaligned.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .errors import DataError

ALL_METRICS = ("mrr@10", "r@5", "r@20", "r@100", "r_precision")


def recall_at_k(ranked: Sequence[int], relevant: set[int], k: int) -> int:
    """1 iff any relevant id appears in the top k, else 0."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        raise DataError("empty relevant set")
    return int(any(pid in relevant for pid in ranked[:k]))


def mrr_at_k(ranked: Sequence[int], relevant: set[int], k: int) -> float:
    """Reciprocal rank of the first relevant id within the top k, else 0."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        raise DataError("empty relevant set")
    for rank, pid in enumerate(ranked[:k], start=1):
        if pid in relevant:
            return 1.0 / rank
    return 0.0


def r_precision(ranked: Sequence[int], relevant: set[int]) -> float:
    """Fraction of the top R results that are relevant, R = |relevant|."""
    if not relevant:
        raise DataError("empty relevant set")
    r = len(relevant)
    return sum(1 for pid in ranked[:r] if pid in relevant) / r


def _single(name: str, ranked: Sequence[int], relevant: set[int]) -> float:
    if name == "mrr@10":
        return mrr_at_k(ranked, relevant, 10)
    if name == "r_precision":
        return r_precision(ranked, relevant)
    if name.startswith("r@"):
        return float(recall_at_k(ranked, relevant, int(name[2:])))
    raise ValueError(f"unknown metric {name!r}")


@dataclass
class EvalReport:
    per_query: dict[int, dict[str, float]]
    averages: dict[str, float]
    n_queries: int
    n_missing: int  # qrels queries with no run entry (scored 0)


def evaluate(run: Mapping[int, Sequence[int]], qrels: Mapping[int, set[int]],
             metrics: Sequence[str] = ALL_METRICS) -> EvalReport:
    """Score a run (query id -> ranked passage ids) against qrels."""
    for name in metrics:
        _single(name, [], {0})  # validate metric names up front
    stray = set(run) - set(qrels)
    if stray:
        raise DataError(f"run contains queries missing from qrels: {sorted(stray)[:5]}")
    per_query: dict[int, dict[str, float]] = {}
    n_missing = 0
    for qid, relevant in qrels.items():
        if not relevant:
            raise DataError(f"query {qid} has an empty relevance set")
        ranked = run.get(qid)
        if ranked is None:
            n_missing += 1
            ranked = []
        per_query[qid] = {name: _single(name, ranked, relevant) for name in metrics}
    n = len(per_query)
    averages = {name: sum(v[name] for v in per_query.values()) / n if n else 0.0
                for name in metrics}
    return EvalReport(per_query=per_query, averages=averages,
                      n_queries=n, n_missing=n_missing)


def read_qrels(path: str | Path) -> dict[int, set[int]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such qrels file: {path}")
    qrels: dict[int, set[int]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'query_id passage_id'")
        qrels.setdefault(int(parts[0]), set()).add(int(parts[1]))
    return qrels


def write_run(path: str | Path, run: Mapping[int, Sequence[tuple[int, float]]]) -> None:
    """Write ranked (passage id, score) lists, queries in ascending id order."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for qid in sorted(run):
            for rank, (pid, score) in enumerate(run[qid], start=1):
                fh.write(f"{qid} {pid} {rank} {score:.6g}\n")


def read_run(path: str | Path) -> dict[int, list[int]]:
    """Read a run file back into query id -> ranked passage ids, validating
    rank contiguity and id uniqueness per query."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such run file: {path}")
    rows: dict[int, list[tuple[int, int]]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 'query_id passage_id rank score'")
        qid, pid, rank = int(parts[0]), int(parts[1]), int(parts[2])
        rows.setdefault(qid, []).append((rank, pid))
    run: dict[int, list[int]] = {}
    for qid, ranked in rows.items():
        ranked.sort()
        if [r for r, _ in ranked] != list(range(1, len(ranked) + 1)):
            raise DataError(f"run ranks for query {qid} are not contiguous from 1")
        ids = [pid for _, pid in ranked]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate passage ids in run for query {qid}")
        run[qid] = ids
    return run


def format_report(report: EvalReport) -> str:
    """Aligned table plus machine-readable key=value lines."""
    width = max(len(name) for name in report.averages)
    lines = [f"{'metric'.ljust(width)}  mean"]
    for name, value in report.averages.items():
        lines.append(f"{name.ljust(width)}  {value:.4f}")
    lines.append("")
    for name, value in report.averages.items():
        lines.append(f"{name}={value:.6f}")
    lines.append(f"queries={report.n_queries}")
    lines.append(f"missing_from_run={report.n_missing}")
    return "\n".join(lines)
