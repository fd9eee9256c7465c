import random
import string

import numpy as np
import pytest

from densekit.data import Passage, Query, TrainPair


def random_text(rng: random.Random, n_words: int, word_len: int = 6) -> str:
    return " ".join(
        "".join(rng.choice(string.ascii_lowercase) for _ in range(word_len))
        for _ in range(n_words))


def random_pairs(n: int, seed: int = 0, max_negatives: int = 3) -> list[TrainPair]:
    """Pairs with unicode-ish texts, optional titles, and 0..max_negatives negatives."""
    rng = random.Random(seed)
    pairs = []
    next_pid = 0
    for i in range(n):
        positive = Passage(id=next_pid, text=random_text(rng, rng.randint(1, 20)),
                           title=random_text(rng, 2) if rng.random() < 0.5 else None)
        n_negs = rng.randint(0, max_negatives)
        negatives = [Passage(id=next_pid + 1 + j, text=random_text(rng, rng.randint(1, 12)))
                     for j in range(n_negs)]
        next_pid += 1 + n_negs
        pairs.append(TrainPair(query=Query(id=i, text=random_text(rng, rng.randint(1, 10))),
                               positive=positive, negatives=negatives))
    return pairs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
