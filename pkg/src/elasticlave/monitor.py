"""Simulated machine-mode monitor: PMP budget, physical layout, context switches.

Every region occupies one PMP entry.  The first ``reserved_entries`` slots
guard the monitor's own metadata and are never handed out.  The PMP file
holds the permissions of the single running principal; switching
principals clears the configuration registers (one write per switch,
tracked as ``cfg_resets``) and then reprograms one entry per region in the
incoming principal's view.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ElErr
from .perm import NONE, Permission

METADATA_SIZE = 0x1000


class AccessFault(Exception):
    """Raised on an address the monitor cannot translate."""

    code = ElErr.ERR_FAULT


@dataclass
class PMPEntry:
    phys_base: int = 0
    length: int = 0
    perms: Permission = NONE
    live: bool = False
    uid: int | None = None

    def covers(self, phys: int) -> bool:
        return self.live and self.phys_base <= phys < self.phys_base + self.length


@dataclass
class MonitorCounters:
    pmp_writes: int = 0
    context_switches: int = 0
    translations: int = 0
    cfg_resets: int = 0


@dataclass
class Monitor:
    pmp_total: int = 16
    reserved_entries: int = 1
    entries: list[PMPEntry] = field(default_factory=list)
    layout: dict[int, tuple[int, int]] = field(default_factory=dict)
    slot_of: dict[int, int] = field(default_factory=dict)
    cursor: int = METADATA_SIZE
    running: int | None = None
    counters: MonitorCounters = field(default_factory=MonitorCounters)

    def __post_init__(self) -> None:
        if self.reserved_entries < 0 or self.reserved_entries > self.pmp_total:
            raise ValueError("reserved_entries must lie in [0, pmp_total]")
        if not self.entries:
            self.entries = [PMPEntry() for _ in range(self.pmp_total)]
            for i in range(self.reserved_entries):
                # Monitor metadata: present but inaccessible to lower modes.
                self.entries[i] = PMPEntry(0, METADATA_SIZE, NONE, True, None)

    @property
    def capacity(self) -> int:
        return self.pmp_total - self.reserved_entries

    def free_slots(self) -> int:
        return self.capacity - len(self.slot_of)

    def copy(self) -> "Monitor":
        return Monitor(
            self.pmp_total, self.reserved_entries,
            [PMPEntry(e.phys_base, e.length, e.perms, e.live, e.uid) for e in self.entries],
            dict(self.layout), dict(self.slot_of), self.cursor, self.running,
            replace(self.counters),
        )

    # -- region lifetime -------------------------------------------------

    def alloc_region(self, uid: int, size: int) -> ElErr:
        if uid in self.slot_of:
            raise ValueError(f"uid {uid} already has a PMP entry")
        for slot in range(self.reserved_entries, self.pmp_total):
            if not self.entries[slot].live:
                break
        else:
            return ElErr.ERR_PMP_EXHAUSTED
        base = self.cursor
        self.cursor += size
        self.layout[uid] = (base, size)
        self.slot_of[uid] = slot
        self.entries[slot] = PMPEntry(base, size, NONE, True, uid)
        self.counters.pmp_writes += 1
        return ElErr.SUCCESS

    def free_region(self, uid: int) -> None:
        slot = self.slot_of.pop(uid)
        del self.layout[uid]
        self.entries[slot] = PMPEntry()
        self.counters.pmp_writes += 1

    # -- translation and enforcement ---------------------------------------

    def translate(self, state, p: int, vaddr: int) -> tuple[int, int]:
        """Virtual address to (uid, offset) through the enclave's mappings."""
        hit = state.lookup(p, vaddr)
        if hit is None:
            raise AccessFault(f"enclave {p}: no mapping covers {vaddr:#x}")
        base, uid = hit
        self.counters.translations += 1
        return uid, vaddr - base

    def physical(self, uid: int, offset: int) -> int:
        base, length = self.layout[uid]
        if not 0 <= offset < length:
            raise AccessFault(f"offset {offset} outside region {uid}")
        return base + offset

    def check_access(self, state, p: int, vaddr: int, bit: str, length: int = 1) -> bool:
        """Access decision taken purely from the programmed PMP entries.

        A multi-byte access must fall inside one entry's physical range.
        """
        if self.running != p:
            return False
        try:
            uid, offset = self.translate(state, p, vaddr)
            first = self.physical(uid, offset)
            last = self.physical(uid, offset + max(length, 1) - 1)
        except AccessFault:
            return False
        for entry in self.entries:
            if entry.covers(first):
                return entry.covers(last) and entry.perms.has(bit)
        return False

    @staticmethod
    def effective(state, uid: int, p: int) -> Permission:
        """Hardware-visible permission of ``p`` on ``uid`` (lock bit folded in)."""
        entry = state.access.get(uid, {}).get(p)
        if entry is None:
            return NONE
        holder = state.lock_holder(uid)
        if holder is not None and holder != p:
            return NONE
        return entry.cur.without("l")

    def view(self, state, p: int) -> list[int]:
        return sorted(uid for uid, acc in state.access.items() if p in acc)

    def _program(self, state, uid: int, p: int) -> None:
        slot = self.slot_of[uid]
        self.entries[slot].perms = self.effective(state, uid, p)
        self.counters.pmp_writes += 1

    def context_switch(self, state, src: int | None, dst: int) -> int:
        """Install ``dst``'s view; returns the number of region-entry writes."""
        self.counters.context_switches += 1
        self.counters.cfg_resets += 1
        for slot in range(self.reserved_entries, self.pmp_total):
            self.entries[slot].perms = NONE
        self.running = dst
        writes = 0
        for uid in self.view(state, dst):
            self._program(state, uid, dst)
            writes += 1
        return writes

    def refresh(self, state, uid: int) -> None:
        """Reflect a permission-matrix update for ``uid`` into the live PMP file."""
        if self.running is None or uid not in self.slot_of:
            return
        if self.running in state.access.get(uid, {}):
            self._program(state, uid, self.running)
