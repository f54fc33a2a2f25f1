"""Sharing-pattern and synchronization workloads over every backend.

Backends:

* ``elasticlave``: one shared region, access serialized with the lock bit
  (``change`` to acquire/release, ``transfer`` for hand-offs).
* ``elasticlave_nolock``: same interface without the lock bit.  Receivers
  cannot stop a writer from changing the buffer under them, so each
  receiver snapshots what it reads into private memory.
* ``spatial``: the coordinator-based baseline in :mod:`elasticlave.spatial`.

Only ``change`` and ``transfer`` issued after setup count as instructions;
create/share/map and the initial permission activation are setup.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace

from . import spatial
from .core import OS_ID, Config, Elasticlave, SignalKind
from .costs import WORD, CostCounters, Digest, payload, proxy_transform, server_response, words
from .errors import ElErr, WorkloadAbort
from .perm import Permission
from .sched import Scheduler, Wait

log = logging.getLogger(__name__)

DATA_PATTERNS = ("producer_consumer_oneway", "producer_consumer_twoway", "proxy", "client_server")
SYNC_PATTERNS = ("spinlock", "futex")
PATTERNS = DATA_PATTERNS + SYNC_PATTERNS
ALIASES = {"producer_consumer": "producer_consumer_twoway"}
BACKENDS = ("elasticlave", "elasticlave_nolock", "spatial")

SHARED_VA = 0x100000
SHARED2_VA = 0x400000
PRIVATE_VA = 0x800000

RW = Permission.parse("rw--")
RW_L = Permission.parse("rw-l")
R_ = Permission.parse("r---")
R_L = Permission.parse("r--l")

LockAcquired, LockReleased, TransferReceived = (
    SignalKind.LockAcquired, SignalKind.LockReleased, SignalKind.TransferReceived)


@dataclass
class WorkloadSpec:
    pattern: str = "producer_consumer_twoway"
    L: int = 16
    rounds: int = 1
    contention: int = 0
    seed: int = 0
    backend: str = "elasticlave"

    def __post_init__(self) -> None:
        self.pattern = ALIASES.get(self.pattern, self.pattern)
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}; choose from {', '.join(PATTERNS)}")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; choose from {', '.join(BACKENDS)}")
        if self.L < 0:
            raise ValueError("L must be >= 0")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.contention < 0:
            raise ValueError("contention must be >= 0")


@dataclass
class RunReport:
    spec: WorkloadSpec
    counters: CostCounters
    per_round: list[CostCounters]
    checksum: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "counters": self.counters.as_dict(),
            "per_round": [c.as_dict() for c in self.per_round],
            "checksum": self.checksum,
            "extra": dict(sorted(self.extra.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_row(self) -> dict:
        row = {"pattern": self.spec.pattern, "backend": self.spec.backend, "L": self.spec.L,
               "rounds": self.spec.rounds, "contention": self.spec.contention, "seed": self.spec.seed}
        row.update(self.counters.as_dict())
        row.update({k: self.extra[k] for k in sorted(self.extra)})
        row["checksum"] = self.checksum
        return row


def reports_to_csv(reports) -> str:
    rows = [r.csv_row() for r in reports]
    header: list[str] = []
    for row in rows:
        header += [k for k in row if k not in header]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


class _Run:
    """Bookkeeping for one workload execution on the reference machine."""

    def __init__(self, spec: WorkloadSpec, config: Config | None = None):
        self.spec = spec
        self.m = Elasticlave(replace(config or Config(), record_trace=False))
        self.sched = Scheduler(seed=None if spec.seed == 0 else spec.seed)
        self.copies = 0
        self.digest = Digest()
        self.per_round: list[CostCounters] = []
        self.inbox: dict[int, list] = {}
        self.bells: dict[str, int] = {}
        self._base = CostCounters()
        self._mark = CostCounters()

    def must(self, code: ElErr, what: str) -> None:
        if not code.ok:
            raise WorkloadAbort(what, code)

    def create(self, p: int, nbytes: int) -> int:
        uid, code = self.m.create(p, max(nbytes, 1))
        self.must(code, f"create by {p}")
        return uid

    def raw(self) -> CostCounters:
        mc = self.m.monitor.counters
        return CostCounters(
            copies=self.copies,
            instructions=self.m.counts["change"] + self.m.counts["transfer"],
            pmp_writes=mc.pmp_writes,
            context_switches=mc.context_switches,
        )

    def setup_done(self) -> None:
        self._base = self.raw()
        self._mark = self._base

    def counters(self) -> CostCounters:
        return self.raw() - self._base

    def end_round(self) -> None:
        now = self.raw()
        self.per_round.append(now - self._mark)
        self._mark = now

    def observe(self, data: bytes) -> None:
        self.digest.update(data)

    def read(self, p: int, vaddr: int, n: int) -> bytes:
        if n == 0:
            return b""
        data, code = self.m.read_block(p, vaddr, n)
        self.must(code, f"read by {p} at {vaddr:#x}")
        return data

    def write(self, p: int, vaddr: int, data: bytes) -> None:
        if data:
            self.must(self.m.write_block(p, vaddr, data), f"write by {p} at {vaddr:#x}")

    def snapshot(self, p: int, src: int, dst: int, n: int) -> bytes:
        """Copy ``n`` bytes of shared memory into private memory."""
        data = self.read(p, src, n)
        self.write(p, dst, data)
        self.copies += words(n)
        return data

    # Signal delivery: peek at the queue, then drain it with poll_signals.
    def _match(self, p: int, kind: SignalKind, uid: int, actor: int):
        for s in self.inbox.get(p, []) + self.m.state.pending.get(p, []):
            if s.kind is kind and s.region == uid and s.actor == actor:
                return s
        return None

    def await_signal(self, p: int, kind: SignalKind, uid: int, actor: int):
        yield Wait(lambda: self._match(p, kind, uid, actor) is not None)
        box = self.inbox.setdefault(p, [])
        box.extend(self.m.poll_signals(p))
        box.remove(self._match(p, kind, uid, actor))

    # Untrusted OS-delivered doorbells: carry wake-ups, never data.
    def ring(self, name: str) -> None:
        self.bells[name] = self.bells.get(name, 0) + 1

    def await_bell(self, name: str, count: int):
        yield Wait(lambda: self.bells.get(name, 0) >= count)

    def report(self, extra: dict | None = None) -> RunReport:
        mc = self.m.monitor.counters
        info = {"sched_steps": self.sched.steps, "sim_ticks": self.sched.now,
                "translations": mc.translations}
        info.update(extra or {})
        return RunReport(self.spec, self.counters(), self.per_round, self.digest.hexdigest(), info)


def _pc_full(run: _Run, two_way: bool) -> None:
    m, spec = run.m, run.spec
    n = spec.L * WORD
    prod, cons = m.spawn(), m.spawn()
    r = run.create(prod, n)
    run.must(m.share(prod, r, cons, RW_L if two_way else R_), "share")
    run.must(m.map(prod, SHARED_VA, r), "map producer")
    run.must(m.map(cons, SHARED_VA, r), "map consumer")
    # Two-way: the producer keeps the creation lock and the lock then
    # alternates by transfer.  One-way: nobody holds it between rounds.
    run.must(m.change(prod, r, RW_L if two_way else RW), "producer activates")
    run.must(m.change(cons, r, RW if two_way else R_), "consumer activates")
    run.setup_done()

    def producer():
        for rnd in range(spec.rounds):
            if two_way:
                run.write(prod, SHARED_VA, payload(spec.seed, rnd, spec.L))
                yield 1
                run.must(m.transfer(prod, r, cons), "hand-off to consumer")
                yield 1
                yield from run.await_signal(prod, TransferReceived, r, cons)
            else:
                run.must(m.change(prod, r, RW_L), "producer acquire")
                yield 1
                run.write(prod, SHARED_VA, payload(spec.seed, rnd, spec.L))
                yield 1
                run.must(m.change(prod, r, RW), "producer release")
                yield 1
                run.ring("data")
                yield from run.await_bell("ack", rnd + 1)

    def consumer():
        for rnd in range(spec.rounds):
            if two_way:
                yield from run.await_signal(cons, TransferReceived, r, prod)
            else:
                yield from run.await_bell("data", rnd + 1)
            run.observe(run.read(cons, SHARED_VA, n))
            if two_way:
                run.must(m.transfer(cons, r, prod), "hand-back to producer")
            else:
                run.ring("ack")
            run.end_round()
            yield 1

    run.sched.spawn("producer", producer())
    run.sched.spawn("consumer", consumer())


def _proxy_full(run: _Run) -> None:
    m, spec = run.m, run.spec
    n = spec.L * WORD
    src, prox, dst = m.spawn(), m.spawn(), m.spawn()
    r = run.create(src, n)
    run.must(m.share(src, r, prox, RW_L), "share proxy")
    run.must(m.share(src, r, dst, R_L), "share destination")
    for p in (src, prox, dst):
        run.must(m.map(p, SHARED_VA, r), f"map {p}")
    run.must(m.change(src, r, RW), "source drops creation lock")
    run.must(m.change(prox, r, RW), "proxy activates")
    run.must(m.change(dst, r, R_), "destination activates")
    run.setup_done()

    def source():
        for rnd in range(spec.rounds):
            run.must(m.change(src, r, RW_L), "source acquire")
            yield 1
            run.write(src, SHARED_VA, payload(spec.seed, rnd, spec.L))
            yield 1
            run.must(m.transfer(src, r, prox), "source -> proxy")
            yield 1
            yield from run.await_signal(src, LockReleased, r, dst)

    def proxy():
        for _ in range(spec.rounds):
            yield from run.await_signal(prox, TransferReceived, r, src)
            data = run.read(prox, SHARED_VA, n)
            run.write(prox, SHARED_VA, proxy_transform(data))
            yield 1
            run.must(m.transfer(prox, r, dst), "proxy -> destination")
            yield 1

    def destination():
        for _ in range(spec.rounds):
            yield from run.await_signal(dst, TransferReceived, r, prox)
            run.observe(run.read(dst, SHARED_VA, n))
            yield 1
            run.must(m.change(dst, r, R_), "destination release")
            run.end_round()
            yield 1

    run.sched.spawn("source", source())
    run.sched.spawn("proxy", proxy())
    run.sched.spawn("destination", destination())


def _cs_split(L: int) -> tuple[int, int]:
    """Request and response sizes in bytes; together they span L words."""
    return (L - L // 2) * WORD, (L // 2) * WORD


def _cs_full(run: _Run) -> None:
    m, spec = run.m, run.spec
    req_n, resp_n = _cs_split(spec.L)
    client, server = m.spawn(), m.spawn()
    r = run.create(client, req_n + resp_n)
    run.must(m.share(client, r, server, RW_L), "share server")
    run.must(m.map(client, SHARED_VA, r), "map client")
    run.must(m.map(server, SHARED_VA, r), "map server")
    # The client keeps the lock it received at creation; the server activates rw.
    run.must(m.change(client, r, RW_L), "client narrows to rw-l")
    run.must(m.change(server, r, RW), "server activates")
    run.setup_done()

    def client_prog():
        for rnd in range(spec.rounds):
            run.write(client, SHARED_VA, payload(spec.seed, rnd, spec.L)[:req_n])
            yield 1
            run.must(m.transfer(client, r, server), "request -> server")
            yield 1
            yield from run.await_signal(client, TransferReceived, r, server)
            run.observe(run.read(client, SHARED_VA + req_n, resp_n))
            run.end_round()
            yield 1

    def server_prog():
        for _ in range(spec.rounds):
            yield from run.await_signal(server, TransferReceived, r, client)
            request = run.read(server, SHARED_VA, req_n)
            run.observe(request)
            run.write(server, SHARED_VA + req_n, server_response(request, resp_n))
            yield 1
            run.must(m.transfer(server, r, client), "response -> client")
            yield 1

    run.sched.spawn("client", client_prog())
    run.sched.spawn("server", server_prog())


def _one_writer_region(run: _Run, owner: int, reader: int, vaddr: int, nbytes: int) -> int:
    m = run.m
    r = run.create(owner, nbytes)
    run.must(m.share(owner, r, reader, R_), "share read-only")
    run.must(m.map(owner, vaddr, r), "map writer")
    run.must(m.map(reader, vaddr, r), "map reader")
    run.must(m.change(owner, r, RW), "writer drops creation lock")
    run.must(m.change(reader, r, R_), "reader activates")
    return r


def _private_region(run: _Run, p: int, nbytes: int) -> None:
    r = run.create(p, nbytes)
    run.must(run.m.map(p, PRIVATE_VA, r), "map private")


def _pc_nolock(run: _Run) -> None:
    spec = run.spec
    n = spec.L * WORD
    prod, cons = run.m.spawn(), run.m.spawn()
    _one_writer_region(run, prod, cons, SHARED_VA, n)
    _private_region(run, cons, n)
    run.setup_done()

    def producer():
        for rnd in range(spec.rounds):
            run.write(prod, SHARED_VA, payload(spec.seed, rnd, spec.L))
            yield 1
            run.ring("data")
            yield from run.await_bell("ack", rnd + 1)

    def consumer():
        for rnd in range(spec.rounds):
            yield from run.await_bell("data", rnd + 1)
            run.observe(run.snapshot(cons, SHARED_VA, PRIVATE_VA, n))
            yield 1
            run.ring("ack")
            run.end_round()

    run.sched.spawn("producer", producer())
    run.sched.spawn("consumer", consumer())


def _proxy_nolock(run: _Run) -> None:
    spec = run.spec
    n = spec.L * WORD
    src, prox, dst = (run.m.spawn() for _ in range(3))
    _one_writer_region(run, src, prox, SHARED_VA, n)
    _one_writer_region(run, prox, dst, SHARED2_VA, n)
    _private_region(run, prox, n)
    _private_region(run, dst, n)
    run.setup_done()

    def source():
        for rnd in range(spec.rounds):
            run.write(src, SHARED_VA, payload(spec.seed, rnd, spec.L))
            yield 1
            run.ring("in")
            yield from run.await_bell("in-ack", rnd + 1)

    def proxy():
        for rnd in range(spec.rounds):
            yield from run.await_bell("in", rnd + 1)
            data = run.snapshot(prox, SHARED_VA, PRIVATE_VA, n)
            run.ring("in-ack")
            yield from run.await_bell("out-ack", rnd)
            run.write(prox, SHARED2_VA, proxy_transform(data))
            yield 1
            run.ring("out")

    def destination():
        for rnd in range(spec.rounds):
            yield from run.await_bell("out", rnd + 1)
            run.observe(run.snapshot(dst, SHARED2_VA, PRIVATE_VA, n))
            yield 1
            run.ring("out-ack")
            run.end_round()

    run.sched.spawn("source", source())
    run.sched.spawn("proxy", proxy())
    run.sched.spawn("destination", destination())


def _cs_nolock(run: _Run) -> None:
    spec = run.spec
    req_n, resp_n = _cs_split(spec.L)
    client, server = run.m.spawn(), run.m.spawn()
    _one_writer_region(run, client, server, SHARED_VA, req_n)
    _one_writer_region(run, server, client, SHARED2_VA, resp_n)
    _private_region(run, client, resp_n)
    _private_region(run, server, req_n)
    run.setup_done()

    def client_prog():
        for rnd in range(spec.rounds):
            run.write(client, SHARED_VA, payload(spec.seed, rnd, spec.L)[:req_n])
            yield 1
            run.ring("request")
            yield from run.await_bell("response", rnd + 1)
            run.observe(run.snapshot(client, SHARED2_VA, PRIVATE_VA, resp_n))
            yield 1
            run.end_round()

    def server_prog():
        for rnd in range(spec.rounds):
            yield from run.await_bell("request", rnd + 1)
            request = run.snapshot(server, SHARED_VA, PRIVATE_VA, req_n)
            run.observe(request)
            run.write(server, SHARED2_VA, server_response(request, resp_n))
            yield 1
            run.ring("response")

    run.sched.spawn("client", client_prog())
    run.sched.spawn("server", server_prog())


_FULL = {
    "producer_consumer_oneway": lambda run: _pc_full(run, two_way=False),
    "producer_consumer_twoway": lambda run: _pc_full(run, two_way=True),
    "proxy": _proxy_full,
    "client_server": _cs_full,
}
_NOLOCK = {
    "producer_consumer_oneway": _pc_nolock,
    "producer_consumer_twoway": _pc_nolock,
    "proxy": _proxy_nolock,
    "client_server": _cs_nolock,
}
_SPATIAL_NAME = {
    "producer_consumer_oneway": "producer_consumer",
    "producer_consumer_twoway": "producer_consumer",
    "proxy": "proxy",
    "client_server": "client_server",
}


def _run_data(spec: WorkloadSpec, expected: str, config: Config | None = None) -> RunReport:
    if spec.pattern not in DATA_PATTERNS or not spec.pattern.startswith(expected):
        raise ValueError(f"pattern {spec.pattern!r} is not a {expected} workload")
    if spec.backend == "spatial":
        counters, per_round, observed = spatial.run_pattern(
            _SPATIAL_NAME[spec.pattern], spec.L, spec.rounds, spec.seed)
        d = Digest()
        for chunk in observed:
            d.update(chunk)
        return RunReport(spec, counters.copy(), per_round, d.hexdigest())
    run = _Run(spec, config)
    table = _FULL if spec.backend == "elasticlave" else _NOLOCK
    table[spec.pattern](run)
    run.sched.run()
    report = run.report()
    log.debug("%s/%s L=%d -> %s", spec.pattern, spec.backend, spec.L, report.counters)
    return report


def run_producer_consumer(spec: WorkloadSpec, config: Config | None = None) -> RunReport:
    return _run_data(spec, "producer_consumer", config)


def run_proxy(spec: WorkloadSpec, config: Config | None = None) -> RunReport:
    return _run_data(spec, "proxy", config)


def run_client_server(spec: WorkloadSpec, config: Config | None = None) -> RunReport:
    return _run_data(spec, "client_server", config)


# -- synchronization -------------------------------------------------------

LOCK_WORD = 8


def _rpc_ticks(delta: CostCounters) -> int:
    # One tick per counted word operation plus one per message processed.
    return delta.enc_ops + delta.dec_ops + delta.copies + 2


def run_sync(spec: WorkloadSpec, config: Config | None = None) -> RunReport:
    """Two workers each completing ``rounds`` critical sections of
    ``contention`` ticks.  Returns busy-poll counts and simulated wall time."""
    if spec.pattern not in SYNC_PATTERNS:
        raise ValueError(f"pattern {spec.pattern!r} is not a sync workload")
    if spec.backend == "elasticlave_nolock":
        raise ValueError("sync workloads need the lock bit; use elasticlave or spatial")
    stats = {"acquires": 0, "releases": 0, "busy_polls": 0}
    hold = spec.contention
    run = _Run(spec, config)
    m = run.m
    done: list[int] = []

    if spec.backend == "spatial":
        sp = spatial.SpatialShMem(key_seed=spec.seed)
        w1, w2, coord = sp.add_enclave(), sp.add_enclave(), sp.add_enclave()
        lock_arg = b"lock0000"

        def rpc(me: int, method: str) -> tuple[bytes, int]:
            before = sp.counters.copy()
            reply = sp.rpc(me, coord, method, lock_arg, obj="lock")
            return reply, _rpc_ticks(sp.counters - before)

        def worker(me: int):
            for _ in range(spec.rounds):
                while True:
                    reply, cost = rpc(me, "acquire")
                    yield cost
                    if reply == b"\x01":
                        break
                    stats["busy_polls"] += 1
                stats["acquires"] += 1
                if hold:
                    yield hold
                reply, cost = rpc(me, "release")
                if reply != b"\x01":
                    raise WorkloadAbort("release of a lock not held", ElErr.ERR_LOCK_HELD)
                stats["releases"] += 1
                yield cost
                yield 1
            done.append(me)

        workers = (w1, w2)
    else:
        futex = spec.pattern == "futex"
        w1, w2 = m.spawn(), m.spawn()
        r = run.create(w1, LOCK_WORD)
        run.must(m.share(w1, r, w2, RW_L), "share lock region")
        if futex:
            # The OS may read lock states so it can park and wake waiters.
            run.must(m.share(w1, r, OS_ID, R_), "share lock state with OS")
            run.must(m.change(OS_ID, r, R_), "OS activates read")
            run.must(m.map(OS_ID, SHARED_VA, r), "OS maps lock state")
        for p in (w1, w2):
            run.must(m.map(p, SHARED_VA, r), "map lock region")
        run.must(m.change(w1, r, RW), "drop creation lock")
        run.must(m.change(w2, r, RW), "activate")
        run.setup_done()
        sleeping: set[int] = set()
        free = bytes(LOCK_WORD)

        def worker(me: int):
            for _ in range(spec.rounds):
                while True:
                    code = m.change(me, r, RW_L)
                    yield 1
                    if code.ok:
                        break
                    if code is not ElErr.ERR_LOCK_HELD:
                        raise WorkloadAbort("acquire", code)
                    stats["busy_polls"] += 1
                    if futex:
                        sleeping.add(me)
                        yield Wait(lambda: me not in sleeping)
                stats["acquires"] += 1
                run.write(me, SHARED_VA, me.to_bytes(LOCK_WORD, "little"))
                yield 1
                if hold:
                    yield hold
                run.write(me, SHARED_VA, free)
                yield 1
                run.must(m.change(me, r, RW), "release")
                stats["releases"] += 1
                yield 1
                yield 1
            done.append(me)

        if futex:
            def os_waker():
                while len(done) < 2:
                    yield Wait(lambda: bool(sleeping) or len(done) == 2)
                    if len(done) == 2:
                        return
                    state, code = m.read_block(OS_ID, SHARED_VA, LOCK_WORD)
                    if code.ok and state == free:
                        sleeping.clear()
                    yield 1

            run.sched.spawn("os", os_waker())
        workers = (w1, w2)

    for i, w in enumerate(workers):
        run.sched.spawn(f"worker{i + 1}", worker(w))
    run.sched.run()
    wall = max(run.sched.finish_time(f"worker{i + 1}") for i in range(2))
    if spec.backend == "spatial":
        counters = sp.counters.copy()
    else:
        counters = run.counters()
    run.observe(stats["acquires"].to_bytes(8, "little"))
    acquires = max(stats["acquires"], 1)
    extra = dict(stats, wall_ticks=wall, sched_steps=run.sched.steps,
                 rpc_per_acquire=counters.rpc_round_trips / acquires,
                 polls_per_acquire=stats["busy_polls"] / acquires)
    return RunReport(spec, counters, [], run.digest.hexdigest(), extra)


def run_workload(spec: WorkloadSpec, config: Config | None = None) -> RunReport:
    """Run ``spec``; ``config`` tunes the reference machine (PMP size, transfer mode)."""
    if spec.pattern in SYNC_PATTERNS:
        return run_sync(spec, config)
    if spec.pattern.startswith("producer_consumer"):
        return run_producer_consumer(spec, config)
    if spec.pattern == "proxy":
        return run_proxy(spec, config)
    return run_client_server(spec, config)


def load_spec_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out
