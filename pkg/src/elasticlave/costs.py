"""Cost counters, payload generation and digests shared by every backend."""

from __future__ import annotations

import hashlib
import random
from dataclasses import asdict, dataclass, fields

WORD = 8


def words(nbytes: int) -> int:
    return -(-nbytes // WORD)


@dataclass
class CostCounters:
    """Operation counts; crypto and copy counts are in memory words."""

    enc_ops: int = 0
    dec_ops: int = 0
    copies: int = 0
    instructions: int = 0
    rpc_round_trips: int = 0
    pmp_writes: int = 0
    context_switches: int = 0

    def __add__(self, other: "CostCounters") -> "CostCounters":
        return CostCounters(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def __sub__(self, other: "CostCounters") -> "CostCounters":
        return CostCounters(*(getattr(self, f.name) - getattr(other, f.name) for f in fields(self)))

    def copy(self) -> "CostCounters":
        return CostCounters(**asdict(self))

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


def payload(seed: int, round_: int, nwords: int) -> bytes:
    """Deterministic payload of ``nwords`` words for one round."""
    return random.Random(f"{seed}:{round_}").randbytes(nwords * WORD)


class Digest:
    """64-bit digest over the byte stream a consumer observes."""

    def __init__(self) -> None:
        self._h = hashlib.blake2b(digest_size=8)

    def update(self, data: bytes) -> None:
        self._h.update(len(data).to_bytes(8, "little"))
        self._h.update(data)

    def hexdigest(self) -> str:
        return self._h.hexdigest()


def digest_of(chunks) -> str:
    d = Digest()
    for c in chunks:
        d.update(c)
    return d.hexdigest()


_XOR_A5 = bytes(i ^ 0xA5 for i in range(256))
_INC = bytes((i + 1) & 0xFF for i in range(256))


def proxy_transform(data: bytes) -> bytes:
    """In-place update applied by the proxy."""
    return bytes(data).translate(_XOR_A5)


def server_response(request: bytes, nbytes: int) -> bytes:
    """What the server computes from a request in the client-server pattern."""
    return bytes(request[:nbytes]).translate(_INC)
