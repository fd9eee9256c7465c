"""Append-once, read-many binary store of training pairs with O(1) random access.

Byte layout (all integers little-endian):

    [0:8)    magic  b"DKPAIRS1"
    [8:12)   u32    format version (currently 1)
    [12:20)  u64    pair count
    [20:28)  u64    byte position of the offsets table
    [28:..)  records, back to back
    [pos:..) offsets table: count x u64, absolute byte offset of each record

Each record is a u32 payload length followed by the payload:

    u64 query id | str query text
    u64 positive id | u8 has_title [str title] | str positive text
    u16 negative count | per negative: u64 id | u8 has_title [str title] | str text

where ``str`` is a u32 byte length plus UTF-8 bytes.  Records never exceed
2^32 - 1 payload bytes.  A built store is immutable and safe for unlimited
concurrent readers; identical input streams produce byte-identical files.
"""
from __future__ import annotations

import mmap
import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .data import Passage, Query, TrainPair
from .errors import DataError

MAGIC = b"DKPAIRS1"
VERSION = 1
_HEADER = struct.Struct("<8sIQQ")
_MAX_RECORD = (1 << 32) - 1


def _pack_str(out: bytearray, s: str) -> None:
    raw = s.encode("utf-8")
    out += struct.pack("<I", len(raw))
    out += raw


def _pack_passage(out: bytearray, p: Passage) -> None:
    out += struct.pack("<Q", p.id)
    if p.title is None:
        out += b"\x00"
    else:
        out += b"\x01"
        _pack_str(out, p.title)
    _pack_str(out, p.text)


def _pack_pair(pair: TrainPair) -> bytes:
    out = bytearray()
    out += struct.pack("<Q", pair.query.id)
    _pack_str(out, pair.query.text)
    _pack_passage(out, pair.positive)
    if len(pair.negatives) > 0xFFFF:
        raise DataError(f"too many hard negatives in one pair: {len(pair.negatives)}")
    out += struct.pack("<H", len(pair.negatives))
    for neg in pair.negatives:
        _pack_passage(out, neg)
    if len(out) > _MAX_RECORD:
        raise DataError(f"serialized pair exceeds 2^32 bytes ({len(out)})")
    return bytes(out)


class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf, pos: int):
        self.buf = buf
        self.pos = pos

    def take(self, n: int) -> bytes:
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def passage(self) -> Passage:
        pid = self.u64()
        title = self.string() if self.u8() else None
        return Passage(id=pid, text=self.string(), title=title)


def _unpack_pair(buf, pos: int) -> TrainPair:
    r = _Reader(buf, pos)
    qid = r.u64()
    qtext = r.string()
    positive = r.passage()
    negatives = [r.passage() for _ in range(r.u16())]
    return TrainPair(query=Query(id=qid, text=qtext), positive=positive, negatives=negatives)


class PairStore:
    """Memory-mapped random-access view of a built pair store."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if not self.path.exists():
            raise DataError(f"no such pair store: {self.path}")
        self._fh = self.path.open("rb")
        self._mm = mmap.mmap(self._fh.fileno(), 0, access=mmap.ACCESS_READ)
        magic, version, count, offsets_pos = _HEADER.unpack_from(self._mm, 0)
        if magic != MAGIC:
            raise DataError(f"{self.path}: bad magic {magic!r}")
        if version != VERSION:
            raise DataError(f"{self.path}: unsupported version {version}")
        self._count = count
        self._offsets = np.frombuffer(self._mm, dtype="<u8", count=count, offset=offsets_pos)

    def __len__(self) -> int:
        return self._count

    def __getitem__(self, i: int) -> TrainPair:
        if not 0 <= i < self._count:
            raise IndexError(f"pair index {i} out of range [0, {self._count})")
        pos = int(self._offsets[i])
        # skip the u32 length prefix; the payload is self-describing
        return _unpack_pair(self._mm, pos + 4)

    def __iter__(self) -> Iterator[TrainPair]:
        for i in range(self._count):
            yield self[i]

    def close(self) -> None:
        if self._mm is not None:
            self._offsets = None
            self._mm.close()
            self._fh.close()
            self._mm = None

    def __enter__(self) -> "PairStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def build_pair_store(pairs: Iterable[TrainPair], path: str | Path) -> PairStore:
    """Write ``pairs`` to ``path`` and return the opened store."""
    path = Path(path)
    offsets: list[int] = []
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, 0, 0))
        pos = _HEADER.size
        for pair in pairs:
            payload = _pack_pair(pair)
            offsets.append(pos)
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)
            pos += 4 + len(payload)
        offsets_pos = pos
        fh.write(np.asarray(offsets, dtype="<u8").tobytes())
        fh.seek(0)
        fh.write(_HEADER.pack(MAGIC, VERSION, len(offsets), offsets_pos))
    return PairStore(path)


def downsample(store: PairStore, n: int, seed: int, path: str | Path) -> PairStore:
    """Uniform order-preserving sample of ``n`` pairs without replacement."""
    if n > len(store):
        raise DataError(f"cannot sample {n} pairs from a store of {len(store)}")
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(store), size=n, replace=False))
    return build_pair_store((store[int(i)] for i in keep), path)
