"""Reference state machine for the enclave memory-sharing interface.

The machine state is the tuple of enclaves, regions, permission matrix,
region memory, and per-enclave virtual mappings, plus pending signal
queues.  Each instruction checks its pre-condition in full before
touching anything, so a failed instruction leaves the state untouched.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import ElErr, EnforcementMismatch
from .monitor import Monitor
from .perm import ALL, NONE, Permission
from .trace import TraceEntry

OS_ID = 0


class SignalKind(Enum):
    RegionDestroyed = "RegionDestroyed"
    LockAcquired = "LockAcquired"
    LockReleased = "LockReleased"
    TransferReceived = "TransferReceived"


@dataclass(frozen=True)
class Signal:
    kind: SignalKind
    region: int
    actor: int

    def __str__(self) -> str:
        return f"{self.kind.value}(uid={self.region},actor={self.actor})"


class Access(Enum):
    READ = "read"
    WRITE = "write"
    EXECUTE = "execute"

    @property
    def bit(self) -> str:
        return self.value[0] if self is not Access.EXECUTE else "x"


@dataclass(frozen=True)
class RegionRecord:
    owner: int
    size: int


@dataclass(frozen=True)
class PermEntry:
    max: Permission
    cur: Permission


@dataclass
class SystemState:
    """Machine state.

    ``access[uid][eid]`` is the permission matrix and ``views[eid][vaddr]``
    the set of mapping triples, both indexed for lookup speed.
    """

    enclaves: set[int] = field(default_factory=lambda: {OS_ID})
    regions: dict[int, RegionRecord] = field(default_factory=dict)
    access: dict[int, dict[int, PermEntry]] = field(default_factory=dict)
    memory: dict[int, bytearray] = field(default_factory=dict)
    views: dict[int, dict[int, int]] = field(default_factory=dict)
    pending: dict[int, list[Signal]] = field(default_factory=dict)
    masks: dict[int, frozenset[SignalKind]] = field(default_factory=dict)
    next_uid: int = 1
    next_eid: int = OS_ID + 1

    def copy(self) -> "SystemState":
        return SystemState(
            enclaves=set(self.enclaves),
            regions=dict(self.regions),
            access={u: dict(a) for u, a in self.access.items()},
            memory={u: bytearray(m) for u, m in self.memory.items()},
            views={p: dict(v) for p, v in self.views.items()},
            pending={p: list(q) for p, q in self.pending.items()},
            masks=dict(self.masks),
            next_uid=self.next_uid,
            next_eid=self.next_eid,
        )

    def owner(self, uid: int) -> int:
        return self.regions[uid].owner

    def size(self, uid: int) -> int:
        return self.regions[uid].size

    def entry(self, uid: int, p: int) -> PermEntry | None:
        return self.access.get(uid, {}).get(p)

    def lock_holder(self, uid: int) -> int | None:
        for p, e in self.access.get(uid, {}).items():
            if e.cur.has("l"):
                return p
        return None

    def triples(self) -> set[tuple[int, int, int]]:
        """Mappings as (enclave, vaddr, uid) triples."""
        return {(p, v, u) for p, view in self.views.items() for v, u in view.items()}

    def lookup(self, p: int, vaddr: int) -> tuple[int, int] | None:
        """Return ``(base, uid)`` of the mapping of ``p`` covering ``vaddr``."""
        for base, uid in self.views.get(p, {}).items():
            if base <= vaddr < base + self.regions[uid].size:
                return base, uid
        return None

    def key(self) -> tuple:
        """Hashable, order-independent rendering of the whole state."""
        return (
            tuple(sorted(self.enclaves)),
            tuple(sorted((u, r.owner, r.size) for u, r in self.regions.items())),
            tuple(sorted((u, p, e.max.bits, e.cur.bits)
                         for u, acc in self.access.items() for p, e in acc.items())),
            tuple(sorted((u, bytes(m)) for u, m in self.memory.items())),
            tuple(sorted(self.triples())),
            tuple(sorted((p, tuple(q)) for p, q in self.pending.items() if q)),
            tuple(sorted((p, tuple(sorted(k.value for k in m))) for p, m in self.masks.items() if m)),
            self.next_uid,
            self.next_eid,
        )


@dataclass
class Config:
    pmp_total: int = 16
    reserved_entries: int = 1
    # Additionally require the transfer target to have the region mapped.
    strict_transfer_map: bool = False
    # Mutation hook: disabling breaks lock exclusivity on purpose.
    check_change_lock: bool = True
    # Cross-check every access against the programmed PMP entries.
    check_enforcement: bool = True
    record_trace: bool = True


def _hex(b: int) -> str:
    return f"{b:#x}"


class Elasticlave:
    """The instruction interface over a :class:`SystemState`.

    Callers must serialize invocations; the machine is not reentrant.
    """

    def __init__(self, config: Config | None = None):
        self.config = config or Config()
        self.state = SystemState()
        self.monitor = Monitor(self.config.pmp_total, self.config.reserved_entries)
        self.trace: list[TraceEntry] = []
        self.steps = 0
        self.counts: Counter[str] = Counter()
        self._emitted: list[str] = []

    # -- snapshots -------------------------------------------------------

    def snapshot(self) -> tuple:
        return (self.state.copy(), self.monitor.copy(), len(self.trace),
                self.steps, self.counts.copy())

    def restore(self, snap: tuple) -> None:
        state, monitor, ntrace, steps, counts = snap
        self.state = state.copy()
        self.monitor = monitor.copy()
        del self.trace[ntrace:]
        self.steps = steps
        self.counts = counts.copy()

    # -- bookkeeping -----------------------------------------------------

    def _log(self, caller: int, instr: str, args: tuple, code: ElErr, value=None) -> None:
        self.counts[instr] += 1
        if self.config.record_trace:
            result = code.name if value is None else f"{code.name}:{value}"
            self.trace.append(TraceEntry(self.steps, caller, instr,
                                         tuple((k, str(v)) for k, v in args),
                                         result, tuple(self._emitted)))
        self._emitted = []
        self.steps += 1

    def _signal(self, target: int, kind: SignalKind, uid: int, actor: int) -> None:
        if kind in self.state.masks.get(target, frozenset()):
            return
        sig = Signal(kind, uid, actor)
        self.state.pending.setdefault(target, []).append(sig)
        self._emitted.append(f"{sig}>{target}")

    # -- principals ------------------------------------------------------

    def spawn(self) -> int:
        """Admit a new enclave into the enclave set; returns its id."""
        eid = self.state.next_eid
        self.state.next_eid += 1
        self.state.enclaves.add(eid)
        self._log(OS_ID, "spawn", (), ElErr.SUCCESS, eid)
        return eid

    # -- instructions ----------------------------------------------------

    def create(self, p: int, size: int) -> tuple[int | None, ElErr]:
        if size <= 0:
            raise ValueError("region size must be positive")
        st = self.state
        args = (("size", size),)
        if p not in st.enclaves:
            self._log(p, "create", args, ElErr.ERR_NO_ENCLAVE)
            return None, ElErr.ERR_NO_ENCLAVE
        uid = st.next_uid
        code = self.monitor.alloc_region(uid, size)
        if not code.ok:
            self._log(p, "create", args, code)
            return None, code
        st.next_uid += 1
        st.regions[uid] = RegionRecord(p, size)
        st.access[uid] = {p: PermEntry(ALL, ALL)}
        st.memory[uid] = bytearray(size)
        self.monitor.refresh(st, uid)
        self._log(p, "create", args, ElErr.SUCCESS, uid)
        return uid, ElErr.SUCCESS

    def _region_check(self, p: int, uid: int) -> ElErr:
        if p not in self.state.enclaves:
            return ElErr.ERR_NO_ENCLAVE
        if uid not in self.state.regions:
            return ElErr.ERR_NO_REGION
        return ElErr.SUCCESS

    def map(self, p: int, vaddr: int, uid: int) -> ElErr:
        st = self.state
        code = self._region_check(p, uid)
        if code.ok and p not in st.access[uid]:
            code = ElErr.ERR_NOT_ACCESSOR
        if code.ok:
            size = st.size(uid)
            for u, g in st.views.get(p, {}).items():
                if u + st.size(g) > vaddr and vaddr + size > u:
                    code = ElErr.ERR_OVERLAP
                    break
        if code.ok:
            st.views.setdefault(p, {})[vaddr] = uid
        self._log(p, "map", (("vaddr", _hex(vaddr)), ("uid", uid)), code)
        return code

    def unmap(self, p: int, vaddr: int, uid: int) -> ElErr:
        st = self.state
        view = st.views.get(p, {})
        if view.get(vaddr) == uid:
            del view[vaddr]
            if not view:
                del st.views[p]
            code = ElErr.SUCCESS
        else:
            code = ElErr.ERR_NOT_MAPPED
        self._log(p, "unmap", (("vaddr", _hex(vaddr)), ("uid", uid)), code)
        return code

    def share(self, p: int, uid: int, o: int, perm: Permission) -> ElErr:
        st = self.state
        code = self._region_check(p, uid)
        if code.ok and o not in st.enclaves:
            code = ElErr.ERR_NO_ENCLAVE
        if code.ok and st.owner(uid) != p:
            code = ElErr.ERR_NOT_OWNER
        if code.ok and (o == p or o in st.access[uid]):
            code = ElErr.ERR_ALREADY_SHARED
        if code.ok:
            st.access[uid][o] = PermEntry(perm, NONE)
            self.monitor.refresh(st, uid)
        self._log(p, "share", (("uid", uid), ("to", o), ("perm", perm)), code)
        return code

    def change(self, p: int, uid: int, perm: Permission) -> ElErr:
        st = self.state
        code = self._region_check(p, uid)
        entry = st.entry(uid, p) if code.ok else None
        if code.ok and entry is None:
            code = ElErr.ERR_NOT_ACCESSOR
        if code.ok and not perm <= entry.max:
            code = ElErr.ERR_EXCEEDS_MAX
        if code.ok and perm.has("l") and self.config.check_change_lock:
            holder = st.lock_holder(uid)
            if holder is not None and holder != p:
                code = ElErr.ERR_LOCK_HELD
        if code.ok:
            had_lock = entry.cur.has("l")
            st.access[uid][p] = replace(entry, cur=perm)
            owner = st.owner(uid)
            if not had_lock and perm.has("l"):
                self._signal(owner, SignalKind.LockAcquired, uid, p)
            elif had_lock and not perm.has("l"):
                self._signal(owner, SignalKind.LockReleased, uid, p)
            self.monitor.refresh(st, uid)
        self._log(p, "change", (("uid", uid), ("perm", perm)), code)
        return code

    def destroy(self, p: int, uid: int) -> ElErr:
        st = self.state
        code = self._region_check(p, uid)
        if code.ok and p != OS_ID and st.owner(uid) != p:
            code = ElErr.ERR_NOT_OWNER
        if code.ok:
            owner = st.owner(uid)
            mappers = sorted(q for q, view in st.views.items() if uid in view.values())
            notify = [q for q in mappers if q != p]
            if p == OS_ID and owner != p and owner not in notify:
                notify.append(owner)
            mem = st.memory.pop(uid)
            mem[:] = bytes(len(mem))
            del st.regions[uid]
            del st.access[uid]
            for q in mappers:
                view = st.views[q]
                for v in [v for v, u in view.items() if u == uid]:
                    del view[v]
                if not view:
                    del st.views[q]
            self.monitor.free_region(uid)
            for q in notify:
                self._signal(q, SignalKind.RegionDestroyed, uid, p)
        self._log(p, "destroy", (("uid", uid),), code)
        return code

    def transfer(self, p: int, uid: int, o: int) -> ElErr:
        st = self.state
        code = self._region_check(p, uid)
        src = dst = None
        if code.ok:
            src, dst = st.entry(uid, p), st.entry(uid, o)
            if src is None or dst is None:
                code = ElErr.ERR_NOT_ACCESSOR
        if code.ok and not src.cur.has("l"):
            code = ElErr.ERR_LOCK_HELD
        if code.ok and not dst.max.has("l"):
            code = ElErr.ERR_EXCEEDS_MAX
        if code.ok and self.config.strict_transfer_map and uid not in st.views.get(o, {}).values():
            code = ElErr.ERR_NOT_MAPPED
        if code.ok:
            acc = st.access[uid]
            acc[p] = replace(src, cur=src.cur.without("l"))
            acc[o] = replace(acc[o], cur=acc[o].cur.with_("l"))
            owner = st.owner(uid)
            self._signal(owner, SignalKind.LockReleased, uid, p)
            self._signal(owner, SignalKind.LockAcquired, uid, o)
            self._signal(o, SignalKind.TransferReceived, uid, p)
            self.monitor.refresh(st, uid)
        self._log(p, "transfer", (("uid", uid), ("to", o)), code)
        return code

    # -- memory accesses -------------------------------------------------

    def _permits(self, p: int, vaddr: int, length: int, kind: Access):
        """Return ``(uid, offset)`` when the access is allowed, else ``None``."""
        st = self.state
        hit = st.lookup(p, vaddr)
        allowed = None
        if hit is not None:
            base, uid = hit
            cur = st.access[uid][p].cur
            if (vaddr + length <= base + st.size(uid) and cur.has(kind.bit)
                    and (cur.has("l") or st.lock_holder(uid) is None)):
                allowed = (uid, vaddr - base)
        if self.config.check_enforcement and p in st.enclaves:
            mon = self.monitor
            if mon.running != p:
                mon.context_switch(st, mon.running, p)
            pmp = mon.check_access(st, p, vaddr, kind.bit, length)
            if pmp != (allowed is not None):
                raise EnforcementMismatch(
                    f"enclave {p} {kind.value} {vaddr:#x}+{length}: matrix={allowed is not None} pmp={pmp}")
        return allowed

    def mem_access(self, p: int, vaddr: int, kind: Access, data: int | None = None):
        """Single-byte read/write/execute; returns ``(byte | None, ElErr)``."""
        if kind is Access.WRITE and (data is None or not 0 <= data <= 0xFF):
            raise ValueError("write needs a byte value")
        args = [("vaddr", _hex(vaddr)), ("kind", kind.value)]
        if data is not None:
            args.append(("data", _hex(data)))
        hit = self._permits(p, vaddr, 1, kind)
        if hit is None:
            self._log(p, "mem_access", tuple(args), ElErr.ERR_FAULT)
            return None, ElErr.ERR_FAULT
        uid, off = hit
        value = None
        if kind is Access.READ:
            value = self.state.memory[uid][off]
        elif kind is Access.WRITE:
            self.state.memory[uid][off] = data
        self._log(p, "mem_access", tuple(args), ElErr.SUCCESS,
                  None if value is None else _hex(value))
        return value, ElErr.SUCCESS

    def read(self, p: int, vaddr: int):
        return self.mem_access(p, vaddr, Access.READ)

    def write(self, p: int, vaddr: int, data: int) -> ElErr:
        return self.mem_access(p, vaddr, Access.WRITE, data)[1]

    def execute(self, p: int, vaddr: int) -> ElErr:
        return self.mem_access(p, vaddr, Access.EXECUTE)[1]

    def read_block(self, p: int, vaddr: int, length: int) -> tuple[bytes | None, ElErr]:
        """Equivalent to ``length`` byte reads that must all succeed or all fault."""
        hit = self._permits(p, vaddr, length, Access.READ)
        args = (("vaddr", _hex(vaddr)), ("len", length))
        if hit is None:
            self._log(p, "read_block", args, ElErr.ERR_FAULT)
            return None, ElErr.ERR_FAULT
        uid, off = hit
        data = bytes(self.state.memory[uid][off:off + length])
        self._log(p, "read_block", args, ElErr.SUCCESS)
        return data, ElErr.SUCCESS

    def write_block(self, p: int, vaddr: int, data: bytes) -> ElErr:
        hit = self._permits(p, vaddr, len(data), Access.WRITE)
        args = (("vaddr", _hex(vaddr)), ("data", data.hex() or "empty"))
        if hit is None:
            self._log(p, "write_block", args, ElErr.ERR_FAULT)
            return ElErr.ERR_FAULT
        uid, off = hit
        self.state.memory[uid][off:off + len(data)] = data
        self._log(p, "write_block", args, ElErr.SUCCESS)
        return ElErr.SUCCESS

    # -- signals ---------------------------------------------------------

    def poll_signals(self, p: int) -> list[Signal]:
        queue = self.state.pending.pop(p, [])
        self._log(p, "poll_signals", (), ElErr.SUCCESS, len(queue))
        return queue

    def mask_signals(self, p: int, kinds) -> ElErr:
        """Replace ``p``'s signal mask; an empty set unmasks everything."""
        kinds = frozenset(kinds)
        if kinds:
            self.state.masks[p] = kinds
        else:
            self.state.masks.pop(p, None)
        names = "|".join(sorted(k.value for k in kinds)) or "none"
        self._log(p, "mask_signals", (("kinds", names),), ElErr.SUCCESS)
        return ElErr.SUCCESS
