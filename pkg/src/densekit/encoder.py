"""Compact trainable bi-encoder with analytic gradients.

Each tower is a hashed embedding bag: token bucket ids index rows of an
embedding table, rows are mean-pooled, and an optional head applies a linear
projection followed by layer normalization.  Query and passage towers are
separate by default and a single shared tower when configured.

Similarity is the raw dot product between query and candidate vectors.  The
training loss over a batch is the mean negative log likelihood of each query
picking its own positive out of a candidate set shared by the whole batch
(all positives plus all hard negatives).

Everything runs in float64; encoding is computed row by row so results are
bit-identical regardless of how a corpus is batched or sharded.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, NumericError
from .text import NUM_BUCKETS

LN_EPS = 1e-5
HEADS = ("none", "projection_layernorm")


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    buckets: int = NUM_BUCKETS
    shared: bool = False
    head: str = "none"
    query_max_len: int = 256
    passage_max_len: int = 256

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.buckets < self.dim:
            raise ValueError(f"buckets ({self.buckets}) must be >= dim ({self.dim})")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")

    @property
    def has_head(self) -> bool:
        return self.head == "projection_layernorm"


@dataclass
class Tower:
    embed: np.ndarray                 # [buckets, dim]
    proj_w: np.ndarray | None = None  # [dim, dim]
    proj_b: np.ndarray | None = None  # [dim]
    ln_gain: np.ndarray | None = None
    ln_bias: np.ndarray | None = None

    def dense_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name in ("proj_w", "proj_b", "ln_gain", "ln_bias"):
            arr = getattr(self, name)
            if arr is not None:
                out.append((name, arr))
        return out


@dataclass
class EncoderParams:
    config: EncoderConfig
    query: Tower
    passage: Tower  # the same object as `query` when config.shared

    def tower(self, side: str) -> Tower:
        if side == "query":
            return self.query
        if side == "passage":
            return self.passage
        raise ValueError(f"side must be 'query' or 'passage', got {side!r}")

    def tower_key(self, side: str) -> str:
        return "shared" if self.config.shared else side

    def named_towers(self) -> list[tuple[str, Tower]]:
        """Unique towers, in serialization order."""
        if self.config.shared:
            return [("shared", self.query)]
        return [("query", self.query), ("passage", self.passage)]


def _init_tower(config: EncoderConfig, rng: np.random.Generator) -> Tower:
    d = config.dim
    embed = rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), size=(config.buckets, d))
    if not config.has_head:
        return Tower(embed=embed)
    return Tower(
        embed=embed,
        proj_w=np.eye(d) + 0.01 * rng.standard_normal((d, d)),
        proj_b=np.zeros(d),
        ln_gain=np.ones(d),
        ln_bias=np.zeros(d),
    )


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    rng = np.random.default_rng(seed)
    query = _init_tower(config, rng)
    passage = query if config.shared else _init_tower(config, rng)
    return EncoderParams(config=config, query=query, passage=passage)


@dataclass
class _RowCache:
    ids: np.ndarray        # bucket rows after modulo
    pooled: np.ndarray
    zhat: np.ndarray | None = None
    invstd: float = 0.0


def _encode_batch(tower: Tower, buckets: int, batch: Sequence[np.ndarray],
                  want_cache: bool):
    dim = tower.embed.shape[1]
    out = np.empty((len(batch), dim))
    caches: list[_RowCache] | None = [] if want_cache else None
    for i, seq in enumerate(batch):
        ids = np.asarray(seq, dtype=np.int64)
        if ids.size == 0:
            raise DataError("cannot encode an empty token sequence")
        ids = ids % buckets
        pooled = tower.embed[ids].mean(axis=0)
        if tower.proj_w is not None:
            z = tower.proj_w @ pooled + tower.proj_b
            mu = z.mean()
            invstd = 1.0 / np.sqrt(z.var() + LN_EPS)
            zhat = (z - mu) * invstd
            out[i] = tower.ln_gain * zhat + tower.ln_bias
        else:
            zhat, invstd = None, 0.0
            out[i] = pooled
        if want_cache:
            caches.append(_RowCache(ids=ids, pooled=pooled, zhat=zhat, invstd=invstd))
    return out, caches


def encode(params: EncoderParams, batch: Sequence[np.ndarray], side: str) -> np.ndarray:
    """Encode token sequences into a [B x dim] matrix of vectors."""
    out, _ = _encode_batch(params.tower(side), params.config.buckets, batch, want_cache=False)
    return out


@dataclass
class BatchForward:
    """Forward state of one training batch, consumed by backward()."""

    loss: float
    scores: np.ndarray   # [B, C]: query i x candidate j dot products
    probs: np.ndarray    # softmax rows of `scores`
    q_out: np.ndarray
    c_out: np.ndarray
    q_caches: list[_RowCache]
    c_caches: list[_RowCache]


def forward_loss(params: EncoderParams, queries: Sequence[np.ndarray],
                 positives: Sequence[np.ndarray],
                 hard_negatives: Sequence[Sequence[np.ndarray]] | None = None
                 ) -> BatchForward:
    """Score every query against the batch-wide candidate set and compute the
    mean NLL of each query's own positive.

    Candidates are the B positives (column j is query j's positive) followed
    by all hard negatives in query order.
    """
    B = len(queries)
    if B < 1:
        raise ValueError("batch must contain at least one query")
    if hard_negatives is None:
        hard_negatives = [[] for _ in range(B)]
    if len(positives) != B or len(hard_negatives) != B:
        raise ValueError("queries, positives, and hard_negatives must have equal length")
    candidates = list(positives) + [n for negs in hard_negatives for n in negs]

    buckets = params.config.buckets
    q_out, q_caches = _encode_batch(params.tower("query"), buckets, queries, True)
    c_out, c_caches = _encode_batch(params.tower("passage"), buckets, candidates, True)

    with np.errstate(invalid="ignore"):
        scores = q_out @ c_out.T
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite similarity score in batch")
    shifted = scores - scores.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    own = np.arange(B)
    loss = -float(logp[own, own].mean())
    return BatchForward(loss=loss, scores=scores, probs=np.exp(logp),
                        q_out=q_out, c_out=c_out,
                        q_caches=q_caches, c_caches=c_caches)


@dataclass
class TowerGrads:
    embed_rows: dict[int, np.ndarray] = field(default_factory=dict)
    proj_w: np.ndarray | None = None
    proj_b: np.ndarray | None = None
    ln_gain: np.ndarray | None = None
    ln_bias: np.ndarray | None = None


@dataclass
class Gradients:
    towers: dict[str, TowerGrads]


def _zero_grads(params: EncoderParams) -> Gradients:
    towers = {}
    for name, tower in params.named_towers():
        tg = TowerGrads()
        for pname, arr in tower.dense_arrays():
            setattr(tg, pname, np.zeros_like(arr))
        towers[name] = tg
    return Gradients(towers=towers)


def _backprop_row(tower: Tower, tg: TowerGrads, cache: _RowCache, dy: np.ndarray) -> None:
    if tower.proj_w is not None:
        tg.ln_gain += dy * cache.zhat
        tg.ln_bias += dy
        dzhat = dy * tower.ln_gain
        dz = cache.invstd * (dzhat - dzhat.mean() - cache.zhat * (dzhat * cache.zhat).mean())
        tg.proj_w += np.outer(dz, cache.pooled)
        tg.proj_b += dz
        dx = tower.proj_w.T @ dz
    else:
        dx = dy
    rows, counts = np.unique(cache.ids, return_counts=True)
    weights = counts / cache.ids.size
    for r, w in zip(rows, weights):
        acc = tg.embed_rows.get(int(r))
        if acc is None:
            tg.embed_rows[int(r)] = w * dx
        else:
            acc += w * dx


def backward(params: EncoderParams, fwd: BatchForward) -> Gradients:
    """Analytic gradients of the batch loss for every touched parameter.
    Embedding rows not referenced by the batch get no entry at all."""
    B, C = fwd.probs.shape
    own = np.arange(B)
    dscores = fwd.probs.copy()
    dscores[own, own] -= 1.0
    dscores /= B
    dQ = dscores @ fwd.c_out
    dC = dscores.T @ fwd.q_out

    grads = _zero_grads(params)
    q_tower = params.tower("query")
    c_tower = params.tower("passage")
    qg = grads.towers[params.tower_key("query")]
    cg = grads.towers[params.tower_key("passage")]
    for i in range(B):
        _backprop_row(q_tower, qg, fwd.q_caches[i], dQ[i])
    for j in range(C):
        _backprop_row(c_tower, cg, fwd.c_caches[j], dC[j])
    return grads


@dataclass
class TowerMoments:
    m_embed: np.ndarray
    v_embed: np.ndarray
    dense_m: dict[str, np.ndarray] = field(default_factory=dict)
    dense_v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class AdamState:
    step: int
    towers: dict[str, TowerMoments]


def init_adam_state(params: EncoderParams) -> AdamState:
    towers = {}
    for name, tower in params.named_towers():
        tm = TowerMoments(m_embed=np.zeros_like(tower.embed),
                          v_embed=np.zeros_like(tower.embed))
        for pname, arr in tower.dense_arrays():
            tm.dense_m[pname] = np.zeros_like(arr)
            tm.dense_v[pname] = np.zeros_like(arr)
        towers[name] = tm
    return AdamState(step=0, towers=towers)


def adam_step(params: EncoderParams, grads: Gradients, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
              ) -> tuple[EncoderParams, AdamState]:
    """One Adam update, in place.  Embedding moments advance only for rows the
    batch touched; the shared step counter handles bias correction."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, tower in params.named_towers():
        tg = grads.towers[name]
        tm = state.towers[name]
        if tg.embed_rows:
            rows = np.fromiter(tg.embed_rows.keys(), dtype=np.int64, count=len(tg.embed_rows))
            g = np.stack(list(tg.embed_rows.values()))
            m = tm.m_embed[rows] = beta1 * tm.m_embed[rows] + (1 - beta1) * g
            v = tm.v_embed[rows] = beta2 * tm.v_embed[rows] + (1 - beta2) * g * g
            tower.embed[rows] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        for pname, arr in tower.dense_arrays():
            g = getattr(tg, pname)
            m = tm.dense_m[pname] = beta1 * tm.dense_m[pname] + (1 - beta1) * g
            v = tm.dense_v[pname] = beta2 * tm.dense_v[pname] + (1 - beta2) * g * g
            arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


def triangular_lr(step: int, total: int, peak: float, warmup_frac: float) -> float:
    """Linear ramp 0 -> peak over the warmup, then linear decay peak -> 0."""
    if total <= 0:
        raise ValueError("total steps must be positive")
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if not 0.0 <= warmup_frac <= 1.0:
        raise ValueError(f"warmup_frac must be in [0, 1], got {warmup_frac}")
    warmup = warmup_frac * total
    if warmup > 0 and step <= warmup:
        return peak * step / warmup
    if total == warmup:
        return peak
    return peak * (total - step) / (total - warmup)


CKPT_MAGIC = b"DKCKPT01"


def save_checkpoint(path: str | Path, params: EncoderParams, step: int = 0) -> None:
    """Header (config + step as JSON) followed by raw little-endian float64
    tensors in named_towers() order.  Deterministic: equal params give equal
    bytes."""
    header = json.dumps({"config": asdict(params.config), "step": step},
                        sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for _, tower in params.named_towers():
            fh.write(np.ascontiguousarray(tower.embed, dtype="<f8").tobytes())
            for _, arr in tower.dense_arrays():
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[EncoderParams, int]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such checkpoint: {path}")
    raw = path.read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise DataError(f"{path}: bad checkpoint magic")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    config = EncoderConfig(**header["config"])
    pos = 12 + hlen

    def take(shape) -> np.ndarray:
        nonlocal pos
        n = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += n * 8
        return arr

    def read_tower() -> Tower:
        tower = Tower(embed=take((config.buckets, config.dim)))
        if config.has_head:
            tower.proj_w = take((config.dim, config.dim))
            tower.proj_b = take((config.dim,))
            tower.ln_gain = take((config.dim,))
            tower.ln_bias = take((config.dim,))
        return tower

    query = read_tower()
    passage = query if config.shared else read_tower()
    if pos != len(raw):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return EncoderParams(config=config, query=query, passage=passage), int(header["step"])
