import numpy as np
import pytest

from densekit.bm25 import (bm25_score, bm25_topk, build_inverted_index,
                           mine_bm25_negatives)
from densekit.data import Passage, Query, TrainPair
from densekit.errors import DataError
from densekit.pretrain import GenStats

from conftest import random_text

FIVE = [
    Passage(id=1, text="the cat sat"),
    Passage(id=2, text="the cat sat on the mat"),
    Passage(id=3, text="dogs and cats"),
    Passage(id=4, text="the dog barked"),
    Passage(id=5, text="cat cat cat"),
]

# Frozen oracle: spreadsheet-style evaluation of
#   sum_t ln(1+(N-df+0.5)/(df+0.5)) * tf*(k1+1)/(tf + k1*(1-b+b*len/avgdl))
# over the FIVE corpus with k1=0.9, b=0.4 (avgdl=3.6).
ORACLE = {
    "the cat": [1.113144947165332, 1.130837053891515, 0.0,
                0.556572473582666, 0.800072930775082],
    "cat": [0.556572473582666, 0.478548295043040, 0.0, 0.0, 0.800072930775082],
    "dogs": [0.0, 0.0, 1.431499612025974, 0.0, 0.0],
    "the cat sat on the mat": [2.573734051711264, 5.022055332939987, 0.0,
                               1.113144947165332, 0.800072930775082],
    "cat cat": [1.113144947165332, 0.957096590086080, 0.0, 0.0, 1.600145861550165],
}


def test_postings_counts():
    index = build_inverted_index([Passage(id=0, text="a b a")])
    assert index.postings["a"] == [(0, 2)]
    assert index.postings["b"] == [(0, 1)]
    assert index.avgdl == 3.0
    assert index.doc_len[0] == 3


def test_empty_collection():
    index = build_inverted_index([])
    assert index.n_docs == 0
    assert index.postings == {}


def test_title_indexed_with_text():
    index = build_inverted_index([Passage(id=0, text="body words", title="Heading")])
    assert "heading" in index.postings
    assert index.doc_len[0] == 3


def test_df_matches_brute_force(rng):
    import random
    r = random.Random(4)
    passages = [Passage(id=i, text=random_text(r, r.randint(3, 15), word_len=2))
                for i in range(100)]
    index = build_inverted_index(passages)
    texts = [p.text.split() for p in passages]
    for term in index.postings:
        brute = sum(1 for words in texts if term in words)
        assert index.df(term) == brute


def test_hand_computed_oracle_table():
    index = build_inverted_index(FIVE, k1=0.9, b=0.4)
    for query, expected in ORACLE.items():
        terms = index.terms(query)
        for passage, want in zip(FIVE, expected):
            assert bm25_score(index, terms, passage.id) == pytest.approx(want, abs=1e-6)


def test_absent_term_contributes_zero():
    index = build_inverted_index(FIVE)
    base = bm25_score(index, ["cat"], 1)
    assert bm25_score(index, ["cat", "zeppelin"], 1) == base
    assert bm25_score(index, ["zeppelin"], 1) == 0.0


def test_b_zero_is_length_invariant():
    short = Passage(id=0, text="target word here")
    long = Passage(id=1, text="target word here plus lots of padding terms xx yy zz")
    index = build_inverted_index([short, long], b=0.0)
    terms = ["target", "word"]
    assert bm25_score(index, terms, 0) == pytest.approx(bm25_score(index, terms, 1))
    # with b > 0 the longer passage scores lower
    index_b = build_inverted_index([short, long], b=0.4)
    assert bm25_score(index_b, terms, 1) < bm25_score(index_b, terms, 0)


def test_idf_positive_for_all_df():
    # df ranges over 0..N by constructing terms present in 0..N docs
    n = 6
    passages = [Passage(id=i, text=" ".join(f"t{j}" for j in range(i + 1)))
                for i in range(n)]
    index = build_inverted_index(passages)
    assert index.df("t0") == n
    for term in [f"t{j}" for j in range(n)] + ["absent"]:
        assert index.idf(term) > 0.0


def test_tf_monotonicity():
    passages = [Passage(id=0, text="cat dog dog"), Passage(id=1, text="cat cat dog")]
    index = build_inverted_index(passages)
    # same length, same df; higher tf of "cat" must not score lower
    assert bm25_score(index, ["cat"], 1) > bm25_score(index, ["cat"], 0)


def brute_force_topk(index, passages, terms, k):
    scored = [(p.id, bm25_score(index, terms, p.id)) for p in passages]
    scored = [(pid, s) for pid, s in scored if s != 0.0]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


def test_topk_matches_brute_force():
    import random
    r = random.Random(9)
    passages = [Passage(id=i * 3, text=random_text(r, r.randint(2, 12), word_len=2))
                for i in range(400)]
    index = build_inverted_index(passages)
    for qi in range(30):
        terms = random_text(r, r.randint(1, 4), word_len=2).split()
        for k in (1, 5, 400, 1000):
            got = bm25_topk(index, terms, k)
            want = brute_force_topk(index, passages, terms, k)
            assert [pid for pid, _ in got] == [pid for pid, _ in want]
            assert np.allclose([s for _, s in got], [s for _, s in want], atol=1e-12)


def test_topk_single_term_equals_sorted_postings():
    index = build_inverted_index(FIVE)
    got = bm25_topk(index, ["cat"], 10)
    want = sorted(((pid, bm25_score(index, ["cat"], pid)) for pid, _ in
                   index.postings["cat"]), key=lambda t: (-t[1], t[0]))
    assert got == pytest.approx(want)


def test_topk_disjoint_vocabulary_empty():
    index = build_inverted_index(FIVE)
    assert bm25_topk(index, ["xylophone"], 5) == []


def test_topk_tie_break_ascending_id():
    passages = [Passage(id=i, text="same exact words") for i in (7, 3, 5)]
    index = build_inverted_index(passages)
    got = bm25_topk(index, ["same", "words"], 3)
    assert [pid for pid, _ in got] == [3, 5, 7]
    assert len({s for _, s in got}) == 1


def test_topk_prefix_property():
    import random
    r = random.Random(2)
    passages = [Passage(id=i, text=random_text(r, 8, word_len=2)) for i in range(60)]
    index = build_inverted_index(passages)
    terms = passages[0].text.split()[:3]
    for k in range(1, 12):
        small = bm25_topk(index, terms, k)
        large = bm25_topk(index, terms, k + 1)
        assert large[:len(small)] == small


def test_stopwords_are_dropped():
    index = build_inverted_index(FIVE, stopwords=["the"])
    assert "the" not in index.postings
    assert index.terms("the cat") == ["cat"]


def test_mine_excludes_gold():
    by_id = {p.id: p for p in FIVE}
    pairs = [TrainPair(query=Query(id=0, text="the cat sat"), positive=FIVE[0])]
    index = build_inverted_index(FIVE)
    mined = mine_bm25_negatives(index, pairs, 1, by_id)
    assert len(mined[0].negatives) == 1
    # gold (id 1) is itself the top hit; the single negative is the runner-up
    full = bm25_topk(index, index.terms("the cat sat"), 5)
    assert full[0][0] == 1
    assert mined[0].negatives[0].id == full[1][0]


def test_mine_counts_queries_without_hits():
    by_id = {p.id: p for p in FIVE}
    pairs = [TrainPair(query=Query(id=0, text="xylophone quartz"), positive=FIVE[2])]
    index = build_inverted_index(FIVE)
    stats = GenStats()
    mined = mine_bm25_negatives(index, pairs, 1, by_id, stats)
    assert mined[0].negatives == []
    assert stats.dropped == 1


def test_mine_exclusion_oracle():
    import random
    r = random.Random(6)
    passages = [Passage(id=i, text=random_text(r, 10, word_len=2)) for i in range(300)]
    by_id = {p.id: p for p in passages}
    index = build_inverted_index(passages)
    pairs = []
    for i in range(200):
        src = passages[r.randrange(300)]
        pairs.append(TrainPair(query=Query(id=i, text=" ".join(src.text.split()[:5])),
                               positive=src))
    mined = mine_bm25_negatives(index, pairs, 1, by_id)
    for pair in mined:
        assert len(pair.negatives) <= 1
        assert all(n.id != pair.positive.id for n in pair.negatives)


def test_duplicate_passage_ids_rejected():
    with pytest.raises(DataError):
        build_inverted_index([Passage(id=1, text="a"), Passage(id=1, text="b")])
