"""Exact flat inner-product index over passage embeddings.

Index file layout (little-endian):

    [0:8)    magic  b"DKINDEX1"
    [8:12)   u32    version (1)
    [12:20)  u64    N rows
    [20:24)  u32    dim
    [24:..)  id map: N x u64 passage ids
    [..:..)  matrix: N x dim float32, row-major

Embeddings are computed in float64 row by row (so shard size never changes
the output), stored as float32, and scores are accumulated in float64.  Ties
break by ascending passage id.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Passage, Query, TrainPair, passage_input
from .encoder import EncoderParams, encode
from .errors import DataError, NumericError
from .pretrain import GenStats
from .text import tokenize

INDEX_MAGIC = b"DKINDEX1"
_INDEX_HEADER = struct.Struct("<8sIQI")


@dataclass
class EmbeddingIndex:
    ids: np.ndarray     # [N] uint64 passage ids
    matrix: np.ndarray  # [N, dim] float32, possibly a read-only memmap

    def __len__(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def open(cls, path: str | Path) -> "EmbeddingIndex":
        """Map an index file without copying the matrix."""
        path = Path(path)
        if not path.exists():
            raise DataError(f"no such index: {path}")
        with path.open("rb") as fh:
            magic, version, n, dim = _INDEX_HEADER.unpack(fh.read(_INDEX_HEADER.size))
        if magic != INDEX_MAGIC:
            raise DataError(f"{path}: bad index magic")
        if version != 1:
            raise DataError(f"{path}: unsupported index version {version}")
        ids_off = _INDEX_HEADER.size
        mat_off = ids_off + 8 * n
        ids = np.fromfile(path, dtype="<u8", count=n, offset=ids_off)
        matrix = np.memmap(path, dtype="<f4", mode="r", offset=mat_off, shape=(n, dim))
        return cls(ids=ids, matrix=matrix)


def embed_corpus(params: EncoderParams, passages: Sequence[Passage],
                 path: str | Path | None = None, shard_rows: int = 1024
                 ) -> EmbeddingIndex:
    """Encode every passage (title first) into index rows, working in shards
    of ``shard_rows``.  With a path, shards stream straight to the file and
    the result is reopened as a memmap."""
    if not passages:
        raise DataError("cannot embed an empty passage collection")
    if shard_rows < 1:
        raise ValueError(f"shard_rows must be >= 1, got {shard_rows}")
    max_len = params.config.passage_max_len
    ids = np.array([p.id for p in passages], dtype="<u8")
    if len(np.unique(ids)) != len(ids):
        raise DataError("duplicate passage ids in collection")

    def shards():
        for lo in range(0, len(passages), shard_rows):
            chunk = passages[lo:lo + shard_rows]
            seqs = [tokenize(passage_input(p), max_len, "passage") for p in chunk]
            vecs = encode(params, seqs, "passage")
            bad = np.flatnonzero(~np.isfinite(vecs).all(axis=1))
            if bad.size:
                raise NumericError(f"non-finite embedding for passage {chunk[bad[0]].id}")
            yield vecs.astype("<f4")

    if path is None:
        return EmbeddingIndex(ids=ids, matrix=np.concatenate(list(shards()), axis=0))
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_INDEX_HEADER.pack(INDEX_MAGIC, 1, len(passages), params.config.dim))
        fh.write(ids.tobytes())
        for vecs in shards():
            fh.write(np.ascontiguousarray(vecs).tobytes())
    return EmbeddingIndex.open(path)


def search(index: EmbeddingIndex, query_vectors: np.ndarray, k: int
           ) -> list[list[tuple[int, float]]]:
    """Exact top-k by inner product for each query row.

    Returns, per query, up to k (passage id, float32 score) pairs ordered by
    descending score with ties broken by ascending passage id.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = np.atleast_2d(np.asarray(query_vectors, dtype=np.float64))
    if q.shape[1] != index.dim:
        raise DataError(f"query dim {q.shape[1]} != index dim {index.dim}")
    matrix = np.asarray(index.matrix, dtype=np.float64)
    scores = q @ matrix.T
    results = []
    for row in scores:
        order = np.lexsort((index.ids, -row))[:k]
        results.append([(int(index.ids[i]), float(np.float32(row[i]))) for i in order])
    return results


def encode_queries(params: EncoderParams, queries: Sequence[Query]) -> np.ndarray:
    seqs = [tokenize(qu.text, params.config.query_max_len, "query") for qu in queries]
    return encode(params, seqs, "query")


def mine_hard_negatives(index: EmbeddingIndex, params: EncoderParams,
                        pairs: Sequence[TrainPair], passages: Mapping[int, Passage],
                        depth: int, per_pair: int, seed: int,
                        stats: GenStats | None = None) -> list[TrainPair]:
    """Dense negative mining: search the top ``depth`` results per query, drop
    the gold passage, and sample ``per_pair`` uniformly without replacement
    from what remains."""
    if depth < 1 or per_pair < 1:
        raise ValueError("depth and per_pair must be >= 1")
    stats = stats if stats is not None else GenStats()
    rng = np.random.default_rng(seed)
    qvecs = encode_queries(params, [p.query for p in pairs])
    ranked = search(index, qvecs, depth)
    out = []
    for pair, hits in zip(pairs, ranked):
        cand = [pid for pid, _ in hits if pid != pair.positive.id]
        if not cand:
            stats.dropped += 1
            out.append(TrainPair(query=pair.query, positive=pair.positive))
            continue
        take = min(per_pair, len(cand))
        chosen = rng.choice(len(cand), size=take, replace=False)
        negatives = []
        for ci in sorted(int(c) for c in chosen):
            passage = passages.get(cand[ci])
            if passage is None:
                raise DataError(f"mined negative {cand[ci]} missing from passage pool")
            negatives.append(passage)
        stats.emitted += 1
        out.append(TrainPair(query=pair.query, positive=pair.positive, negatives=negatives))
    return out
