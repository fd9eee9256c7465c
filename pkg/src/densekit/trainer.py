"""Training loops with simulated multi-worker negative gathering.

Multi-worker execution runs in one process: the global batch is split into
equal per-rank WorkerBatches, gathered back in ascending rank order, and the
loss is computed over the union candidate set, so the candidate set every
query sees is independent of the worker count.

Validation embeds a small proxy corpus and ranks each validation query's gold
passage by dot product; the checkpoint with the best proxy mean reciprocal
rank is the one returned.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .bm25 import InvertedIndex, mine_bm25_negatives
from .data import Passage, Query, TrainPair, passage_input
from .dense_index import embed_corpus, encode_queries, mine_hard_negatives, search
from .encoder import (AdamState, EncoderConfig, EncoderParams, adam_step, backward,
                      forward_loss, init_adam_state, init_params, triangular_lr)
from .errors import DataError, NumericError
from .pretrain import GenStats
from .text import tokenize


@dataclass
class TrainConfig:
    batch_size: int = 32
    hard_negatives: int = 1
    peak_lr: float = 0.05
    warmup_frac: float = 0.1
    total_steps: int = 1000
    seed: int = 0
    validate_interval: int = 500
    patience: int = 5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.hard_negatives < 0:
            raise ValueError("hard_negatives must be >= 0")


@dataclass
class Batch:
    queries: list[np.ndarray]
    positives: list[np.ndarray]
    negatives: list[list[np.ndarray]]

    def __len__(self) -> int:
        return len(self.queries)


@dataclass
class WorkerBatch(Batch):
    rank: int = 0


def gather_negatives(batches: Sequence[WorkerBatch]) -> Batch:
    """Concatenate worker batches in ascending rank order.  Every query in the
    merged batch scores all workers' positives and hard negatives."""
    if not batches:
        raise DataError("gather requires at least one worker batch")
    sizes = {len(b) for b in batches}
    if len(sizes) != 1:
        raise DataError(f"ragged local batch sizes: {sorted(len(b) for b in batches)}")
    merged = Batch(queries=[], positives=[], negatives=[])
    for wb in sorted(batches, key=lambda b: b.rank):
        merged.queries.extend(wb.queries)
        merged.positives.extend(wb.positives)
        merged.negatives.extend(wb.negatives)
    return merged


@dataclass
class ProxyCorpus:
    """Reduced validation pool: gold passages plus up to 50 hard negatives per
    query, deduplicated, capped in size.  Every query's gold is present."""

    passages: list[Passage]
    queries: list[Query]
    gold: dict[int, int]  # query id -> gold passage id


def build_proxy_corpus(pairs: Sequence[TrainPair], cap: int = 10_000,
                       max_negatives: int = 50) -> ProxyCorpus:
    passages: dict[int, Passage] = {}
    queries, gold = [], {}
    for pair in pairs:
        if len(passages) >= cap and pair.positive.id not in passages:
            break
        passages[pair.positive.id] = pair.positive
        queries.append(pair.query)
        gold[pair.query.id] = pair.positive.id
    for pair in pairs:
        if pair.query.id not in gold:
            continue
        for neg in pair.negatives[:max_negatives]:
            if len(passages) >= cap:
                break
            passages.setdefault(neg.id, neg)
    return ProxyCorpus(passages=list(passages.values()), queries=queries, gold=gold)


def proxy_validate(params: EncoderParams, proxy: ProxyCorpus) -> float:
    """Mean reciprocal rank of each query's gold passage over the proxy
    corpus, ranked by dot product with ascending-id tie-break."""
    max_len = params.config.passage_max_len
    from .encoder import encode  # local import keeps module load cheap

    pvecs = encode(params, [tokenize(passage_input(p), max_len, "passage")
                            for p in proxy.passages], "passage")
    qvecs = encode_queries(params, proxy.queries)
    ids = np.array([p.id for p in proxy.passages], dtype=np.int64)
    scores = qvecs @ pvecs.T
    total = 0.0
    for qi, query in enumerate(proxy.queries):
        gold_id = proxy.gold[query.id]
        where = np.flatnonzero(ids == gold_id)
        if where.size == 0:
            continue  # gold absent: reciprocal rank 0
        gi = where[0]
        row = scores[qi]
        rank = 1 + int(np.sum(row > row[gi])) \
                 + int(np.sum((row == row[gi]) & (ids < gold_id)))
        total += 1.0 / rank
    return total / len(proxy.queries) if proxy.queries else 0.0


@dataclass
class TrainResult:
    params: EncoderParams        # best checkpoint by proxy MRR (final if no validator)
    step: int                    # global step of the returned params
    step_losses: list[float]
    history: list[tuple[int, float, float]] = field(default_factory=list)  # step, loss, mrr

    @property
    def best_mrr(self) -> float:
        return max((mrr for _, _, mrr in self.history), default=float("nan"))


Validator = Callable[[EncoderParams], float]


def _tokenize_pair(pair: TrainPair, config: EncoderConfig, n_negs: int):
    q = tokenize(pair.query.text, config.query_max_len, "query")
    pos = tokenize(passage_input(pair.positive), config.passage_max_len, "passage")
    negs = [tokenize(passage_input(n), config.passage_max_len, "passage")
            for n in pair.negatives[:n_negs]]
    return q, pos, negs


def train(config: TrainConfig, pairs: Sequence[TrainPair],
          encoder_config: EncoderConfig | None = None, *, workers: int = 1,
          validator: ProxyCorpus | Validator | None = None,
          init: EncoderParams | None = None, start_step: int = 0) -> TrainResult:
    """Run the contrastive training loop over a pair store or pair list.

    ``pairs`` needs only ``len()`` and integer indexing, so a memory-mapped
    PairStore works directly.  Pass ``init`` (and usually ``start_step``) to
    continue from an earlier checkpoint; otherwise fresh parameters come from
    ``encoder_config`` and ``config.seed``.
    """
    if len(pairs) == 0:
        raise DataError("cannot train on an empty pair store")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if config.batch_size % workers:
        raise ValueError(f"batch size {config.batch_size} not divisible by {workers} workers")
    if init is None:
        if encoder_config is None:
            raise ValueError("either encoder_config or init params are required")
        params = init_params(encoder_config, config.seed)
    else:
        params = copy.deepcopy(init)  # updates are in place; keep the caller's checkpoint
    enc_config = params.config

    rng = np.random.default_rng(config.seed)
    state = init_adam_state(params)
    token_cache: dict[int, tuple] = {}
    local = config.batch_size // workers

    best: tuple[float, int, EncoderParams] | None = None
    stale = 0
    step_losses: list[float] = []
    history: list[tuple[int, float, float]] = []
    order = np.array([], dtype=np.int64)
    cursor = 0

    def next_indices() -> list[int]:
        nonlocal order, cursor
        out = []
        while len(out) < config.batch_size:
            if cursor >= len(order):
                order = rng.permutation(len(pairs))
                cursor = 0
            take = min(config.batch_size - len(out), len(order) - cursor)
            out.extend(int(i) for i in order[cursor:cursor + take])
            cursor += take
        return out

    def validate(step: int, loss: float) -> None:
        nonlocal best, stale
        if validator is None:
            return
        if callable(validator):
            mrr = float(validator(params))
        else:
            mrr = proxy_validate(params, validator)
        history.append((step, loss, mrr))
        if best is None or mrr > best[0]:
            best = (mrr, step, copy.deepcopy(params))
            stale = 0
        else:
            stale += 1

    stop = False
    for local_step in range(config.total_steps):
        indices = next_indices()
        worker_batches = []
        for rank in range(workers):
            chunk = indices[rank * local:(rank + 1) * local]
            wb = WorkerBatch(queries=[], positives=[], negatives=[], rank=rank)
            for idx in chunk:
                cached = token_cache.get(idx)
                if cached is None:
                    cached = token_cache[idx] = _tokenize_pair(
                        pairs[idx], enc_config, config.hard_negatives)
                q, pos, negs = cached
                wb.queries.append(q)
                wb.positives.append(pos)
                wb.negatives.append(negs)
            worker_batches.append(wb)
        batch = gather_negatives(worker_batches)

        fwd = forward_loss(params, batch.queries, batch.positives, batch.negatives)
        if not np.isfinite(fwd.loss):
            raise NumericError(
                f"non-finite loss at step {start_step + local_step + 1} "
                f"(lr={triangular_lr(local_step + 1, config.total_steps, config.peak_lr, config.warmup_frac):.3g})")
        step_losses.append(fwd.loss)
        grads = backward(params, fwd)
        lr = triangular_lr(local_step + 1, config.total_steps,
                           config.peak_lr, config.warmup_frac)
        adam_step(params, grads, state, lr)

        global_step = start_step + local_step + 1
        last = local_step == config.total_steps - 1
        if (local_step + 1) % config.validate_interval == 0 or last:
            validate(global_step, fwd.loss)
            if validator is not None and stale >= config.patience:
                stop = True
        if stop:
            break

    if best is not None:
        return TrainResult(params=best[2], step=best[1],
                           step_losses=step_losses, history=history)
    return TrainResult(params=params, step=start_step + len(step_losses),
                       step_losses=step_losses, history=history)


@dataclass
class IterativeResult:
    round1: TrainResult
    round2: TrainResult
    round1_pairs: list[TrainPair]
    round2_pairs: list[TrainPair]

    @property
    def params(self) -> EncoderParams:
        return self.round2.params


def iterative_train(config: TrainConfig, pairs: Sequence[TrainPair],
                    bm25_index: InvertedIndex, passages: Sequence[Passage],
                    encoder_config: EncoderConfig, *, mine_depth: int = 100,
                    workers: int = 1,
                    validator: ProxyCorpus | Validator | None = None
                    ) -> IterativeResult:
    """Two-round training.  Round 1 uses exactly one BM25 negative per query
    (whatever ``config.hard_negatives`` says); round 2 re-mines negatives with
    the round-1 model by dense search and continues from its checkpoint."""
    by_id = {p.id: p for p in passages}
    pair_list = [pairs[i] for i in range(len(pairs))]

    r1_stats = GenStats()
    round1_pairs = mine_bm25_negatives(bm25_index, pair_list, 1, by_id, r1_stats)
    r1_config = replace(config, hard_negatives=1)
    round1 = train(r1_config, round1_pairs, encoder_config,
                   workers=workers, validator=validator)

    index = embed_corpus(round1.params, list(passages))
    per_pair = max(config.hard_negatives, 1)
    round2_pairs = mine_hard_negatives(index, round1.params, pair_list, by_id,
                                       depth=mine_depth, per_pair=per_pair,
                                       seed=config.seed)
    round2 = train(config, round2_pairs, workers=workers, validator=validator,
                   init=round1.params, start_step=round1.step)
    return IterativeResult(round1=round1, round2=round2,
                           round1_pairs=round1_pairs, round2_pairs=round2_pairs)
