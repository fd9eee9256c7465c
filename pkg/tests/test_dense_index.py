import numpy as np
import pytest

from densekit.data import Passage, Query, TrainPair, passage_input
from densekit.dense_index import (EmbeddingIndex, embed_corpus, encode_queries,
                                  mine_hard_negatives, search)
from densekit.encoder import EncoderConfig, encode, init_params
from densekit.errors import DataError, NumericError
from densekit.pretrain import GenStats
from densekit.text import tokenize

from conftest import random_text

CFG = EncoderConfig(dim=16, buckets=256)


def make_passages(n, seed=0, words=8):
    import random
    r = random.Random(seed)
    return [Passage(id=i, text=random_text(r, words, word_len=3)) for i in range(n)]


def test_single_passage_row_matches_encode():
    params = init_params(CFG, seed=0)
    passages = [Passage(id=42, text="hello dense world")]
    index = embed_corpus(params, passages)
    seq = tokenize(passage_input(passages[0]), CFG.passage_max_len, "passage")
    direct = encode(params, [seq], "passage").astype(np.float32)
    assert np.array_equal(index.matrix[0], direct[0])
    assert index.ids[0] == 42


def test_shard_size_invariance(tmp_path):
    params = init_params(CFG, seed=1)
    passages = make_passages(100, seed=2)
    embed_corpus(params, passages, tmp_path / "one.idx", shard_rows=1)
    embed_corpus(params, passages, tmp_path / "all.idx", shard_rows=100)
    embed_corpus(params, passages, tmp_path / "odd.idx", shard_rows=7)
    ref = (tmp_path / "one.idx").read_bytes()
    assert (tmp_path / "all.idx").read_bytes() == ref
    assert (tmp_path / "odd.idx").read_bytes() == ref


def test_index_bytes_deterministic(tmp_path):
    params = init_params(CFG, seed=1)
    passages = make_passages(50, seed=3)
    embed_corpus(params, passages, tmp_path / "a.idx")
    embed_corpus(params, passages, tmp_path / "b.idx")
    assert (tmp_path / "a.idx").read_bytes() == (tmp_path / "b.idx").read_bytes()


def test_reopen_matches_in_memory_search(tmp_path):
    params = init_params(CFG, seed=4)
    passages = make_passages(80, seed=4)
    built = embed_corpus(params, passages, tmp_path / "c.idx")
    reopened = EmbeddingIndex.open(tmp_path / "c.idx")
    queries = np.random.default_rng(0).standard_normal((5, CFG.dim))
    assert search(built, queries, 10) == search(reopened, queries, 10)


def test_search_identity_query():
    rng = np.random.default_rng(7)
    matrix = rng.standard_normal((50, 8)).astype(np.float32)
    matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    index = EmbeddingIndex(ids=np.arange(50, dtype="<u8"), matrix=matrix)
    hits = search(index, matrix[13].astype(np.float64), 1)
    assert hits[0][0][0] == 13


def test_search_orthogonal_ties_break_by_id():
    matrix = np.zeros((6, 4), dtype=np.float32)
    matrix[:, 0] = 1.0
    ids = np.array([9, 4, 11, 2, 7, 5], dtype="<u8")
    index = EmbeddingIndex(ids=ids, matrix=matrix)
    q = np.array([[0.0, 1.0, 0.0, 0.0]])
    hits = search(index, q, 6)[0]
    assert [pid for pid, _ in hits] == [2, 4, 5, 7, 9, 11]
    assert all(s == 0.0 for _, s in hits)


def brute_force_search(index, q, k):
    scores = np.asarray(index.matrix, dtype=np.float64) @ np.asarray(q, dtype=np.float64)
    ranked = sorted(range(len(index)), key=lambda i: (-scores[i], index.ids[i]))[:k]
    return [(int(index.ids[i]), float(np.float32(scores[i]))) for i in ranked]


def test_search_matches_brute_force_with_duplicates():
    rng = np.random.default_rng(11)
    matrix = rng.standard_normal((2000, 32)).astype(np.float32)
    matrix[500] = matrix[100]  # force exact ties
    matrix[501] = matrix[100]
    index = EmbeddingIndex(ids=np.arange(2000, dtype="<u8"), matrix=matrix)
    queries = rng.standard_normal((20, 32))
    for k in (1, 20, 100):
        got = search(index, queries, k)
        for qi in range(20):
            want = brute_force_search(index, queries[qi], k)
            assert got[qi] == want


def test_topk_prefix_consistency():
    rng = np.random.default_rng(3)
    matrix = rng.standard_normal((200, 8)).astype(np.float32)
    index = EmbeddingIndex(ids=np.arange(200, dtype="<u8"), matrix=matrix)
    q = rng.standard_normal((1, 8))
    small = search(index, q, 10)[0]
    large = search(index, q, 50)[0]
    assert large[:10] == small


def test_search_dim_mismatch():
    index = EmbeddingIndex(ids=np.arange(3, dtype="<u8"),
                           matrix=np.zeros((3, 8), dtype=np.float32))
    with pytest.raises(DataError):
        search(index, np.zeros((1, 4)), 1)


def test_embed_rejects_empty_and_nonfinite():
    params = init_params(CFG, seed=0)
    with pytest.raises(DataError):
        embed_corpus(params, [])
    params.passage.embed[:] = np.inf
    with pytest.raises(NumericError) as err:
        embed_corpus(params, [Passage(id=77, text="boom")])
    assert "77" in str(err.value)


def test_mine_gold_dropped_and_clamped():
    params = init_params(EncoderConfig(dim=8, buckets=64, shared=True), seed=5)
    passages = make_passages(10, seed=6)
    by_id = {p.id: p for p in passages}
    index = embed_corpus(params, passages)
    pairs = [TrainPair(query=Query(id=0, text=passages[3].text), positive=passages[3])]
    mined = mine_hard_negatives(index, params, pairs, by_id, depth=2, per_pair=5, seed=0)
    # depth 2 leaves at most 2 candidates; gold may occupy one slot
    assert 1 <= len(mined[0].negatives) <= 2
    assert all(n.id != 3 for n in mined[0].negatives)


def test_mine_exclusion_oracle():
    params = init_params(EncoderConfig(dim=8, buckets=256, shared=True), seed=5)
    passages = make_passages(200, seed=7)
    by_id = {p.id: p for p in passages}
    index = embed_corpus(params, passages)
    pairs = [TrainPair(query=Query(id=i, text=passages[i % 200].text),
                       positive=passages[i % 200]) for i in range(500)]
    stats = GenStats()
    mined = mine_hard_negatives(index, params, pairs, by_id, depth=20, per_pair=3,
                                seed=1, stats=stats)
    assert stats.emitted == 500
    for pair in mined:
        assert pair.negatives
        assert all(n.id != pair.positive.id for n in pair.negatives)


def test_mine_deterministic():
    params = init_params(EncoderConfig(dim=8, buckets=64, shared=True), seed=2)
    passages = make_passages(30, seed=8)
    by_id = {p.id: p for p in passages}
    index = embed_corpus(params, passages)
    pairs = [TrainPair(query=Query(id=i, text=passages[i].text),
                       positive=passages[i]) for i in range(30)]
    a = mine_hard_negatives(index, params, pairs, by_id, depth=10, per_pair=2, seed=3)
    b = mine_hard_negatives(index, params, pairs, by_id, depth=10, per_pair=2, seed=3)
    assert [[n.id for n in p.negatives] for p in a] == \
           [[n.id for n in p.negatives] for p in b]


def test_index_file_format_fields(tmp_path):
    params = init_params(CFG, seed=1)
    passages = make_passages(5, seed=9)
    embed_corpus(params, passages, tmp_path / "f.idx")
    raw = (tmp_path / "f.idx").read_bytes()
    assert raw[:8] == b"DKINDEX1"
    index = EmbeddingIndex.open(tmp_path / "f.idx")
    assert len(index) == 5
    assert index.dim == CFG.dim
    assert list(index.ids) == [0, 1, 2, 3, 4]
    # file size = header + ids + matrix
    assert len(raw) == 24 + 5 * 8 + 5 * CFG.dim * 4
