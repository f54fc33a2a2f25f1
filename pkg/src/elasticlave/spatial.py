"""Shared memory emulated over spatial isolation.

Enclaves own private memory nobody else may touch and talk through public
memory that the OS can see, so every message is encrypted before it is
written there and decrypted after it is read back.  Consistent updates go
through a trusted coordinator that keeps the authoritative replica of each
shared object in its own private memory.

Counting rules (all in words): writing a word to a new location is one
copy, and each word crossing public memory costs one encryption at the
sender and one decryption at the receiver.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .costs import WORD, CostCounters, payload, proxy_transform, server_response, words
from .errors import ElErr

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

PATTERNS = ("producer_consumer", "proxy", "client_server")


def _rotl(x: int, n: int) -> int:
    return ((x << n) | (x >> (64 - n))) & MASK64


def _rotr(x: int, n: int) -> int:
    return ((x >> n) | (x << (64 - n))) & MASK64


class ToyCipher:
    """Keyed invertible per-word mixing.  Not secure; it only stands in for
    the cost of real authenticated encryption."""

    def __init__(self, key: int):
        self.key = key & MASK64

    def _k(self, i: int) -> int:
        return (self.key ^ (i * GOLDEN)) & MASK64

    def encrypt(self, plain: bytes) -> list[int]:
        padded = plain + bytes(-len(plain) % WORD)
        out = []
        for i in range(0, len(padded), WORD):
            w = int.from_bytes(padded[i:i + WORD], "little")
            k = self._k(i // WORD)
            out.append((_rotl(w ^ k, 17) + k) & MASK64)
        return out

    def decrypt(self, cipher: list[int], length: int) -> bytes:
        buf = bytearray()
        for i, c in enumerate(cipher):
            k = self._k(i)
            buf += (_rotr((c - k) & MASK64, 17) ^ k).to_bytes(WORD, "little")
        return bytes(buf[:length])


class IsolationError(AssertionError):
    """An enclave touched another enclave's private memory."""


@dataclass
class PrivateMemory:
    """One enclave's private store.  Every access is audited."""

    owner: int
    objects: dict[str, bytes] = field(default_factory=dict)
    audit: list[tuple[int, str, str]] = field(default_factory=list)

    def _check(self, actor: int, op: str, name: str) -> None:
        self.audit.append((actor, op, name))
        if actor != self.owner:
            raise IsolationError(f"enclave {actor} {op} private {name!r} of enclave {self.owner}")

    def load(self, actor: int, name: str) -> bytes:
        self._check(actor, "load", name)
        return self.objects[name]

    def store(self, actor: int, name: str, data: bytes) -> None:
        self._check(actor, "store", name)
        self.objects[name] = bytes(data)


@dataclass
class PublicChannel:
    """Ciphertext buffer in public memory between two enclaves."""

    cipher: ToyCipher
    buffer: deque = field(default_factory=deque)


class Coordinator:
    """Trusted coordinator serializing updates to shared objects.

    It is hosted inside some enclave ``host`` and keeps replicas in that
    enclave's private memory.  Handlers return ``(reply, words_copied)``.
    """

    def __init__(self, host: int, memory: PrivateMemory):
        self.host = host
        self.memory = memory
        self.handlers: dict[str, Callable[[str, bytes], tuple[bytes, int]]] = {
            "write": self._write,
            "read": self._read,
            "incr": self._incr,
            "acquire": self._acquire,
            "release": self._release,
        }
        self.lock_owner: dict[str, int | None] = {}
        self._caller: int | None = None

    def replica(self, obj: str) -> bytes:
        return self.memory.load(self.host, f"replica:{obj}")

    def handle(self, caller: int, method: str, obj: str, args: bytes) -> tuple[bytes, int]:
        self._caller = caller
        return self.handlers[method](obj, args)

    def _write(self, obj: str, args: bytes) -> tuple[bytes, int]:
        self.memory.store(self.host, f"replica:{obj}", args)
        return b"", words(len(args))

    def _read(self, obj: str, args: bytes) -> tuple[bytes, int]:
        data = self.memory.objects.get(f"replica:{obj}", b"")
        self.memory.audit.append((self.host, "load", f"replica:{obj}"))
        return data, words(len(data))

    def _incr(self, obj: str, args: bytes) -> tuple[bytes, int]:
        name = f"replica:{obj}"
        value = int.from_bytes(self.memory.objects.get(name, bytes(WORD)), "little") + 1
        self.memory.store(self.host, name, value.to_bytes(WORD, "little"))
        return value.to_bytes(WORD, "little"), 0

    def _acquire(self, obj: str, args: bytes) -> tuple[bytes, int]:
        if self.lock_owner.get(obj) is None:
            self.lock_owner[obj] = self._caller
            return b"\x01", 0
        return b"\x00", 0

    def _release(self, obj: str, args: bytes) -> tuple[bytes, int]:
        if self.lock_owner.get(obj) == self._caller:
            self.lock_owner[obj] = None
            return b"\x01", 0
        return b"\x00", 0


class SpatialShMem:
    """Enclaves, their private memories, pairwise secure channels and coordinators."""

    def __init__(self, key_seed: int = 0x5EED):
        self.counters = CostCounters()
        self.private: dict[int, PrivateMemory] = {}
        self.channels: dict[tuple[int, int], PublicChannel] = {}
        self.coordinators: dict[int, Coordinator] = {}
        self._key_seed = key_seed
        self._next = 1

    def add_enclave(self) -> int:
        eid = self._next
        self._next += 1
        self.private[eid] = PrivateMemory(eid)
        for other in list(self.private):
            if other != eid:
                # Keys are assumed pre-established between every pair.
                key = (self._key_seed * GOLDEN + min(other, eid) * 0x100000001B3 + max(other, eid)) & MASK64
                cipher = ToyCipher(key)
                self.channels[(other, eid)] = PublicChannel(cipher)
                self.channels[(eid, other)] = PublicChannel(cipher)
        return eid

    def coordinator(self, host: int) -> Coordinator:
        if host not in self.coordinators:
            self.coordinators[host] = Coordinator(host, self.private[host])
        return self.coordinators[host]

    def secure_send(self, src: int, dst: int, data: bytes) -> ElErr:
        """Encrypt into public memory, then decrypt into ``dst``'s inbox."""
        chan = self.channels[(src, dst)]
        n = words(len(data))
        chan.buffer.append((chan.cipher.encrypt(data), len(data)))
        self.counters.enc_ops += n
        self.counters.copies += n
        cipher, length = chan.buffer.popleft()
        plain = chan.cipher.decrypt(cipher, length)
        self.counters.dec_ops += n
        self.counters.copies += n
        inbox = self.private[dst]
        inbox.store(dst, f"inbox:{src}", plain)
        return ElErr.SUCCESS

    def receive(self, dst: int, src: int) -> bytes:
        return self.private[dst].load(dst, f"inbox:{src}")

    def rpc(self, src: int, host: int, method: str, args: bytes = b"", obj: str = "shared") -> bytes:
        """Call ``method`` on the coordinator hosted in ``host``.

        The request and the reply each cross one secure channel; the
        handler's private copies are counted on top.
        """
        coord = self.coordinator(host)
        if src == host:
            request = args
        else:
            self.secure_send(src, host, args)
            request = self.receive(host, src)
        reply, copied = coord.handle(src, method, obj, request)
        self.counters.copies += copied
        if src != host:
            self.secure_send(host, src, reply)
            reply = self.receive(src, host)
        self.counters.rpc_round_trips += 1
        return reply


def run_pattern(pattern: str, L: int, rounds: int, seed: int = 0):
    """Run a sharing pattern over the baseline.

    Returns ``(counters, per_round, observed)`` where ``observed`` lists the
    byte strings the receiving enclaves read, in order.

    Each hop writes through a coordinator hosted by the receiving enclave,
    so the receiver reads the replica from its own private memory.
    """
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}")
    if rounds < 1 or L < 0:
        raise ValueError("need L >= 0 and rounds >= 1")
    sys_ = SpatialShMem(key_seed=seed)
    per_round: list[CostCounters] = []
    observed: list[bytes] = []
    if L == 0:
        per_obs = 2 if pattern == "client_server" else 1
        return sys_.counters, [CostCounters() for _ in range(rounds)], [b""] * (rounds * per_obs)
    if pattern == "proxy":
        src, prox, dst = (sys_.add_enclave() for _ in range(3))
    else:
        src, dst = sys_.add_enclave(), sys_.add_enclave()
    for rnd in range(rounds):
        before = sys_.counters.copy()
        data = payload(seed, rnd, L)
        if pattern == "producer_consumer":
            sys_.rpc(src, dst, "write", data)
            observed.append(sys_.coordinator(dst).replica("shared"))
        elif pattern == "proxy":
            sys_.rpc(src, prox, "write", data)
            mine = sys_.coordinator(prox).replica("shared")
            sys_.rpc(prox, dst, "write", proxy_transform(mine))
            observed.append(sys_.coordinator(dst).replica("shared"))
        else:
            req_words = L - L // 2
            sys_.rpc(src, dst, "write", data[:req_words * WORD])
            request = sys_.coordinator(dst).replica("shared")
            observed.append(request)
            sys_.rpc(dst, src, "write", server_response(request, (L // 2) * WORD))
            observed.append(sys_.coordinator(src).replica("shared"))
        per_round.append(sys_.counters - before)
    log.debug("spatial %s L=%d rounds=%d -> %s", pattern, L, rounds, sys_.counters)
    return sys_.counters, per_round, observed


def run_pattern_baseline(pattern: str, L: int, rounds: int, seed: int = 0) -> CostCounters:
    return run_pattern(pattern, L, rounds, seed)[0]


class SpatialMemory:
    """Native spatial memory model: private regions plus public regions.

    Private regions are accessible (rwx) to their owner only; public regions
    are accessible to every principal, the OS included.
    """

    def __init__(self) -> None:
        self.regions: dict[str, tuple[int | None, bytearray]] = {}

    def add_private(self, label: str, owner: int, size: int) -> None:
        self.regions[label] = (owner, bytearray(size))

    def add_public(self, label: str, size: int) -> None:
        self.regions[label] = (None, bytearray(size))

    def access(self, principal: int, label: str, offset: int, kind: str, data: int | None = None):
        owner, mem = self.regions[label]
        if (owner is not None and owner != principal) or not 0 <= offset < len(mem):
            return None, ElErr.ERR_FAULT
        if kind == "read":
            return mem[offset], ElErr.SUCCESS
        if kind == "write":
            mem[offset] = data
        return None, ElErr.SUCCESS
