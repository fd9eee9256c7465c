"""Text normalization, the hashing tokenizer, and sentence splitting.

Tokenization is a pure function: lowercase the text, split on whitespace and
ASCII punctuation, and hash every surviving token into one of 2^20 buckets
with a stable 64-bit hash folded down to 20 bits.  There is no vocabulary
file; identical text always produces identical token ids across runs and
platforms.

Truncation is side-dependent: queries keep the LAST ``max_len`` tokens,
passages keep the FIRST ``max_len`` tokens.
"""
from __future__ import annotations

import re
from functools import lru_cache
from hashlib import blake2b

import numpy as np

from .errors import DataError

NUM_BUCKETS = 1 << 20

# Joins dialogue turns into a single query string.  U+241F is not ASCII
# punctuation, so it survives normalization as its own token.
TURN_SEP = "␟"

# One token = a maximal run of characters that are neither whitespace nor
# ASCII punctuation (0x21-0x2f, 0x3a-0x40, 0x5b-0x60, 0x7b-0x7e).
_TOKEN_RE = re.compile(r"[^\s!-/:-@\[-`{-~]+")

# A sentence boundary is terminal punctuation followed by whitespace.
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


class EmptyTextError(DataError):
    """Text normalized to zero tokens."""


def split_tokens(text: str) -> list[str]:
    """Lowercase and split into tokens; may be empty."""
    return _TOKEN_RE.findall(text.lower())


@lru_cache(maxsize=NUM_BUCKETS)
def token_bucket(token: str) -> int:
    """Stable bucket id in [0, 2^20) for one token."""
    h = int.from_bytes(blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
    h ^= h >> 40
    h ^= h >> 20
    return h & (NUM_BUCKETS - 1)


def tokenize(text: str, max_len: int, side: str) -> np.ndarray:
    """Tokenize ``text`` into an int32 array of bucket ids.

    ``side`` is "query" or "passage" and selects the truncation rule:
    queries keep the last ``max_len`` tokens, passages the first.
    Raises EmptyTextError if nothing survives normalization.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    if side not in ("query", "passage"):
        raise ValueError(f"side must be 'query' or 'passage', got {side!r}")
    tokens = split_tokens(text)
    if not tokens:
        raise EmptyTextError(f"text normalized to zero tokens: {text!r}")
    if len(tokens) > max_len:
        tokens = tokens[-max_len:] if side == "query" else tokens[:max_len]
    return np.array([token_bucket(t) for t in tokens], dtype=np.int32)


def split_sentences(text: str) -> list[str]:
    """Split a paragraph into sentences at punctuation + whitespace boundaries.

    A paragraph without any internal boundary comes back as a single piece.
    """
    return [piece.strip() for piece in _SENTENCE_RE.split(text.strip()) if piece.strip()]
