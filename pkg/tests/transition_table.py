"""Table-driven pre-condition clauses for the eight formalized instructions.

Each row names a clause, a builder for the starting machine, the call, and
either the expected post-state (computed by hand from the transition
relation on a plain copy of the state) or the expected error code.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from elasticlave import Config, Elasticlave, ElErr
from elasticlave.core import PermEntry, RegionRecord
from elasticlave.perm import ALL, NONE, Permission

P = Permission.parse
E1, E2, E3, R, VA = 1, 2, 3, 1, 0x1000
SIZE = 16

CLAUSES = {
    "create": ["p in P", "fresh uid / free slot"],
    "map": ["(r,p) in dom(A)", "no intersecting mapping"],
    "unmap": ["(p,v,r) in V"],
    "share": ["o in P", "o != p", "p = Owner(r)", "(r,o) not in dom(A)"],
    "change": ["(r,p) in dom(A)", "a <= MaxPerm(r,p)", "l in a => no other holder"],
    "destroy": ["p = Owner(r)"],
    "transfer": ["(r,p) in dom(A)", "(r,o) in dom(A)", "l in Perm(r,p)", "l in MaxPerm(r,o)"],
    "read": ["mapping exists", "Covers(u,r,v)", "r in Perm(r,p)", "l held by p or by nobody"],
}


def base(pmp_total: int = 16, e1_perm: str = "rw--", e2_perm: str | None = None) -> Elasticlave:
    """E1 owns R (16 bytes, mapped at VA, byte 3 = 0x5A); E2 has max rw-l; E3 has nothing."""
    m = Elasticlave(Config(pmp_total=pmp_total))
    for _ in range(3):
        m.spawn()
    uid, code = m.create(E1, SIZE)
    assert code.ok and uid == R
    assert m.share(E1, R, E2, P("rw-l")).ok
    assert m.map(E1, VA, R).ok
    assert m.write(E1, VA + 3, 0x5A) is ElErr.SUCCESS
    assert m.change(E1, R, P(e1_perm)).ok
    if e2_perm is not None:
        assert m.change(E2, R, P(e2_perm)).ok
    return m


# -- transition relations, written directly against the state tables --------

def t_create(st, p, size, n):
    st.regions[n] = RegionRecord(p, size)
    st.access[n] = {p: PermEntry(ALL, ALL)}
    st.memory[n] = bytearray(size)
    st.next_uid = n + 1


def t_map(st, p, v, r):
    st.views.setdefault(p, {})[v] = r


def t_unmap(st, p, v, r):
    del st.views[p][v]
    if not st.views[p]:
        del st.views[p]


def t_share(st, r, o, a):
    st.access[r][o] = PermEntry(a, NONE)


def t_change(st, r, p, a):
    st.access[r][p] = PermEntry(st.access[r][p].max, a)


def t_destroy(st, r):
    del st.regions[r]
    del st.access[r]
    del st.memory[r]
    for p in list(st.views):
        st.views[p] = {v: g for v, g in st.views[p].items() if g != r}
        if not st.views[p]:
            del st.views[p]


def t_transfer(st, r, p, o):
    src, dst = st.access[r][p], st.access[r][o]
    st.access[r][p] = PermEntry(src.max, src.cur - P("---l"))
    st.access[r][o] = PermEntry(dst.max, dst.cur | P("---l"))


@dataclass
class Row:
    instr: str
    clause: str
    satisfied: bool
    build: Callable[[], Elasticlave]
    call: Callable[[Elasticlave], tuple]
    code: ElErr = ElErr.SUCCESS
    transition: Callable | None = None    # applied to a copy of the pre-state
    value: int | None = None              # expected read result


ROWS: list[Row] = [
    # create
    Row("create", "p in P", True, base, lambda m: m.create(E1, SIZE)[::-1],
        transition=lambda st: t_create(st, E1, SIZE, 2)),
    Row("create", "p in P", False, base, lambda m: m.create(99, SIZE)[::-1], ElErr.ERR_NO_ENCLAVE),
    Row("create", "fresh uid / free slot", True, lambda: base(pmp_total=3), lambda m: m.create(E2, SIZE)[::-1],
        transition=lambda st: t_create(st, E2, SIZE, 2)),
    Row("create", "fresh uid / free slot", False, lambda: base(pmp_total=2), lambda m: m.create(E2, SIZE)[::-1],
        ElErr.ERR_PMP_EXHAUSTED),
    # map
    Row("map", "(r,p) in dom(A)", True, base, lambda m: (m.map(E2, 0x2000, R), None),
        transition=lambda st: t_map(st, E2, 0x2000, R)),
    Row("map", "(r,p) in dom(A)", False, base, lambda m: (m.map(E3, 0x2000, R), None), ElErr.ERR_NOT_ACCESSOR),
    Row("map", "no intersecting mapping", True, base, lambda m: (m.map(E1, VA + SIZE, R), None),
        transition=lambda st: t_map(st, E1, VA + SIZE, R)),
    Row("map", "no intersecting mapping", False, base, lambda m: (m.map(E1, VA + SIZE - 1, R), None),
        ElErr.ERR_OVERLAP),
    # unmap
    Row("unmap", "(p,v,r) in V", True, base, lambda m: (m.unmap(E1, VA, R), None),
        transition=lambda st: t_unmap(st, E1, VA, R)),
    Row("unmap", "(p,v,r) in V", False, base, lambda m: (m.unmap(E1, 0x2000, R), None), ElErr.ERR_NOT_MAPPED),
    # share
    Row("share", "o in P", True, base, lambda m: (m.share(E1, R, E3, P("r---")), None),
        transition=lambda st: t_share(st, R, E3, P("r---"))),
    Row("share", "o in P", False, base, lambda m: (m.share(E1, R, 99, P("r---")), None), ElErr.ERR_NO_ENCLAVE),
    Row("share", "o != p", True, base, lambda m: (m.share(E1, R, E3, P("rwxl")), None),
        transition=lambda st: t_share(st, R, E3, P("rwxl"))),
    Row("share", "o != p", False, base, lambda m: (m.share(E1, R, E1, P("r---")), None), ElErr.ERR_ALREADY_SHARED),
    Row("share", "p = Owner(r)", True, base, lambda m: (m.share(E1, R, E3, NONE), None),
        transition=lambda st: t_share(st, R, E3, NONE)),
    Row("share", "p = Owner(r)", False, base, lambda m: (m.share(E2, R, E3, P("r---")), None), ElErr.ERR_NOT_OWNER),
    Row("share", "(r,o) not in dom(A)", True, base, lambda m: (m.share(E1, R, E3, P("-w--")), None),
        transition=lambda st: t_share(st, R, E3, P("-w--"))),
    Row("share", "(r,o) not in dom(A)", False, base, lambda m: (m.share(E1, R, E2, P("r---")), None),
        ElErr.ERR_ALREADY_SHARED),
    # change
    Row("change", "(r,p) in dom(A)", True, base, lambda m: (m.change(E2, R, P("rw--")), None),
        transition=lambda st: t_change(st, R, E2, P("rw--"))),
    Row("change", "(r,p) in dom(A)", False, base, lambda m: (m.change(E3, R, P("r---")), None),
        ElErr.ERR_NOT_ACCESSOR),
    Row("change", "a <= MaxPerm(r,p)", True, base, lambda m: (m.change(E2, R, P("rw-l")), None),
        transition=lambda st: t_change(st, R, E2, P("rw-l"))),
    Row("change", "a <= MaxPerm(r,p)", False, base, lambda m: (m.change(E2, R, P("rwx-")), None),
        ElErr.ERR_EXCEEDS_MAX),
    Row("change", "l in a => no other holder", True, base, lambda m: (m.change(E2, R, P("r--l")), None),
        transition=lambda st: t_change(st, R, E2, P("r--l"))),
    Row("change", "l in a => no other holder", False, lambda: base(e1_perm="rw-l"),
        lambda m: (m.change(E2, R, P("r--l")), None), ElErr.ERR_LOCK_HELD),
    # destroy
    Row("destroy", "p = Owner(r)", True, base, lambda m: (m.destroy(E1, R), None),
        transition=lambda st: t_destroy(st, R)),
    Row("destroy", "p = Owner(r)", False, base, lambda m: (m.destroy(E2, R), None), ElErr.ERR_NOT_OWNER),
    # transfer
    Row("transfer", "(r,p) in dom(A)", True, lambda: base(e1_perm="rw-l"), lambda m: (m.transfer(E1, R, E2), None),
        transition=lambda st: t_transfer(st, R, E1, E2)),
    Row("transfer", "(r,p) in dom(A)", False, base, lambda m: (m.transfer(E3, R, E2), None),
        ElErr.ERR_NOT_ACCESSOR),
    Row("transfer", "(r,o) in dom(A)", True, lambda: base(e1_perm="---l"), lambda m: (m.transfer(E1, R, E2), None),
        transition=lambda st: t_transfer(st, R, E1, E2)),
    Row("transfer", "(r,o) in dom(A)", False, lambda: base(e1_perm="rw-l"), lambda m: (m.transfer(E1, R, E3), None),
        ElErr.ERR_NOT_ACCESSOR),
    Row("transfer", "l in Perm(r,p)", True, lambda: base(e1_perm="rwxl"), lambda m: (m.transfer(E1, R, E2), None),
        transition=lambda st: t_transfer(st, R, E1, E2)),
    Row("transfer", "l in Perm(r,p)", False, lambda: base(e2_perm="rw--"), lambda m: (m.transfer(E2, R, E1), None),
        ElErr.ERR_LOCK_HELD),
    Row("transfer", "l in MaxPerm(r,o)", True, lambda: base(e2_perm="rw-l"), lambda m: (m.transfer(E2, R, E1), None),
        transition=lambda st: t_transfer(st, R, E2, E1)),
    Row("transfer", "l in MaxPerm(r,o)", False, lambda: _with_e3(base(e1_perm="rw-l"), "r---"),
        lambda m: (m.transfer(E1, R, E3), None), ElErr.ERR_EXCEEDS_MAX),
    # read
    Row("read", "mapping exists", True, base, lambda m: m.read(E1, VA + 3)[::-1], value=0x5A),
    Row("read", "mapping exists", False, lambda: base(e2_perm="rw--"), lambda m: m.read(E2, VA + 3)[::-1],
        ElErr.ERR_FAULT),
    Row("read", "Covers(u,r,v)", True, base, lambda m: m.read(E1, VA + SIZE - 1)[::-1], value=0),
    Row("read", "Covers(u,r,v)", False, base, lambda m: m.read(E1, VA + SIZE)[::-1], ElErr.ERR_FAULT),
    Row("read", "r in Perm(r,p)", True, lambda: base(e1_perm="r---"), lambda m: m.read(E1, VA + 3)[::-1], value=0x5A),
    Row("read", "r in Perm(r,p)", False, lambda: base(e1_perm="-wx-"), lambda m: m.read(E1, VA + 3)[::-1],
        ElErr.ERR_FAULT),
    Row("read", "l held by p or by nobody", True, lambda: base(e1_perm="r--l"), lambda m: m.read(E1, VA + 3)[::-1],
        value=0x5A),
    Row("read", "l held by p or by nobody", False, lambda: base(e2_perm="rw-l"), lambda m: m.read(E1, VA + 3)[::-1],
        ElErr.ERR_FAULT),
]


def _with_e3(m: Elasticlave, perm: str) -> Elasticlave:
    assert m.share(E1, R, E3, P(perm)).ok
    return m


def _strip_signals(st):
    st = st.copy()
    st.pending = {}
    return st


def run_row(row: Row) -> str | None:
    """Run one row; returns a failure message or ``None``."""
    m = row.build()
    pre = m.state.copy()
    code, value = row.call(m)
    if code is not row.code:
        return f"{row.instr} [{row.clause}] expected {row.code.name}, got {code.name}"
    if not row.code.ok:
        if m.state.key() != pre.key():
            return f"{row.instr} [{row.clause}] failed but changed state"
        return None
    if row.value is not None and value != row.value:
        return f"{row.instr} [{row.clause}] read {value}, expected {row.value}"
    expected = _strip_signals(pre)
    if row.transition is not None:
        row.transition(expected)
    if _strip_signals(m.state).key() != expected.key():
        return f"{row.instr} [{row.clause}] post-state differs from the transition relation"
    return None


def coverage() -> dict[tuple[str, str], set[bool]]:
    seen: dict[tuple[str, str], set[bool]] = {}
    for row in ROWS:
        seen.setdefault((row.instr, row.clause), set()).add(row.satisfied)
    return seen


def missing_clauses() -> list[tuple[str, str]]:
    seen = coverage()
    return [(instr, c) for instr, cs in CLAUSES.items() for c in cs if seen.get((instr, c)) != {True, False}]
