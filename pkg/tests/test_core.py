import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import transition_table
from elasticlave import OS_ID, Config, Elasticlave, ElErr, SignalKind
from elasticlave.core import Access, PermEntry
from elasticlave.perm import ALL, NONE, Permission
from elasticlave.trace import parse_trace
from elasticlave.verifier import adversary_moves, apply_op, check_state

P = Permission.parse


# -- create ---------------------------------------------------------------

def test_create_on_fresh_state(m):
    e1 = m.spawn()
    uid, code = m.create(e1, 4096)
    assert (uid, code) == (1, ElErr.SUCCESS)
    assert m.state.entry(1, e1) == PermEntry(ALL, ALL)
    assert m.state.memory[1] == bytearray(4096)


def test_create_unknown_enclave_is_noop(m):
    before = m.state.key()
    assert m.create(42, 16) == (None, ElErr.ERR_NO_ENCLAVE)
    assert m.state.key() == before


def test_create_rejects_non_positive_size(m):
    e1 = m.spawn()
    with pytest.raises(ValueError):
        m.create(e1, 0)


def test_sixteenth_create_exhausts_pmp(m):
    e1 = m.spawn()
    # 16 entries, 1 reserved: 15 regions fit.
    for i in range(15):
        assert m.create(e1, 16)[1].ok, i
    before = m.state.key()
    assert m.create(e1, 16) == (None, ElErr.ERR_PMP_EXHAUSTED)
    assert m.state.key() == before


# -- map / unmap ----------------------------------------------------------

def test_map_after_share(trio):
    m, e1, e2, e3, uid = trio
    assert m.share(e1, uid, e2, P("r---")).ok
    assert m.map(e2, 0x10000, uid).ok


def test_map_twice_overlaps(trio):
    m, e1, e2, e3, uid = trio
    m.share(e1, uid, e2, P("r---"))
    assert m.map(e2, 0x10000, uid).ok
    assert m.map(e2, 0x10000, uid) is ElErr.ERR_OVERLAP


def test_map_same_region_at_two_addresses(trio):
    m, e1, e2, e3, uid = trio
    assert m.map(e1, 0x10000, uid).ok
    assert m.map(e1, 0x20000, uid).ok
    m.write(e1, 0x10005, 7)
    assert m.read(e1, 0x20005) == (7, ElErr.SUCCESS)


def test_map_non_accessor(trio):
    m, e1, e2, e3, uid = trio
    assert m.map(e3, 0x0, uid) is ElErr.ERR_NOT_ACCESSOR


def test_map_unmap_inverse(trio):
    m, e1, e2, e3, uid = trio
    before = m.state.triples()
    assert m.map(e1, 0x4000, uid).ok
    assert m.unmap(e1, 0x4000, uid).ok
    assert m.state.triples() == before


def test_unmap_never_mapped(trio):
    m, e1, *_, uid = trio
    assert m.unmap(e1, 0x4000, uid) is ElErr.ERR_NOT_MAPPED


def test_unmap_keeps_permissions(trio):
    m, e1, e2, e3, uid = trio
    m.map(e1, 0x4000, uid)
    entry = m.state.entry(uid, e1)
    m.unmap(e1, 0x4000, uid)
    assert m.state.entry(uid, e1) == entry


# -- share ----------------------------------------------------------------

def test_share_starts_with_empty_dynamic_permission(trio):
    m, e1, e2, e3, uid = trio
    assert m.share(e1, uid, e2, P("r---")).ok
    assert m.state.entry(uid, e2) == PermEntry(P("r---"), NONE)


def test_share_by_non_owner(trio):
    m, e1, e2, e3, uid = trio
    m.share(e1, uid, e2, P("rw--"))
    assert m.share(e2, uid, e3, P("r---")) is ElErr.ERR_NOT_OWNER


def test_share_twice(trio):
    m, e1, e2, e3, uid = trio
    assert m.share(e1, uid, e2, P("rw-l")).ok
    assert m.share(e1, uid, e2, P("r---")) is ElErr.ERR_ALREADY_SHARED


# -- change ---------------------------------------------------------------

def _shared(trio, perm="rw-l"):
    m, e1, e2, e3, uid = trio
    m.share(e1, uid, e2, P(perm))
    m.change(e1, uid, P("rw--"))
    m.poll_signals(e1)
    return m, e1, e2, e3, uid


def test_change_acquires_lock_and_signals_owner(trio):
    m, e1, e2, e3, uid = _shared(trio)
    assert m.change(e2, uid, P("rw-l")).ok
    assert m.state.lock_holder(uid) == e2
    [sig] = m.poll_signals(e1)
    assert (sig.kind, sig.region, sig.actor) == (SignalKind.LockAcquired, uid, e2)


def test_change_beyond_max(trio):
    m, e1, e2, e3, uid = _shared(trio)
    assert m.change(e2, uid, P("rwx-")) is ElErr.ERR_EXCEEDS_MAX


def test_change_lock_held_elsewhere_is_noop(trio):
    m, e1, e2, e3, uid = _shared(trio)
    m.change(e1, uid, P("rw-l"))
    before = m.state.key()
    assert m.change(e2, uid, P("r--l")) is ElErr.ERR_LOCK_HELD
    assert m.state.key() == before


def test_change_sets_exactly(trio):
    m, e1, e2, e3, uid = _shared(trio)
    m.change(e2, uid, P("rw--"))
    m.change(e2, uid, P("-w--"))
    assert m.state.entry(uid, e2).cur == P("-w--")


def test_change_release_signals_owner(trio):
    m, e1, e2, e3, uid = _shared(trio)
    m.change(e2, uid, P("rw-l"))
    m.change(e2, uid, P("rw--"))
    kinds = [s.kind for s in m.poll_signals(e1)]
    assert kinds == [SignalKind.LockAcquired, SignalKind.LockReleased]


# -- destroy --------------------------------------------------------------

def test_destroy_notifies_mappers_and_revokes(trio):
    m, e1, e2, e3, uid = trio
    for e in (e2, e3):
        m.share(e1, uid, e, P("rw--"))
        m.change(e, uid, P("rw--"))
        m.map(e, 0x8000, uid)
    m.change(e1, uid, P("rw--"))
    assert m.destroy(e1, uid).ok
    for e in (e2, e3):
        assert [s.kind for s in m.poll_signals(e)] == [SignalKind.RegionDestroyed]
    assert m.read(e2, 0x8000) == (None, ElErr.ERR_FAULT)
    assert uid not in m.state.regions and not m.state.triples()


def test_destroy_by_accessor(trio):
    m, e1, e2, e3, uid = trio
    m.share(e1, uid, e2, P("rw--"))
    assert m.destroy(e2, uid) is ElErr.ERR_NOT_OWNER


def test_os_may_reclaim_and_owner_is_told(trio):
    m, e1, e2, e3, uid = trio
    assert m.destroy(OS_ID, uid).ok
    assert [s.kind for s in m.poll_signals(e1)] == [SignalKind.RegionDestroyed]


def test_destroy_zeroizes_before_release(trio):
    m, e1, e2, e3, uid = trio
    m.map(e1, 0x1000, uid)
    m.write(e1, 0x1000, 0xFF)
    mem = m.state.memory[uid]
    m.destroy(e1, uid)
    assert mem == bytearray(len(mem))


def test_uids_never_reused(m):
    e1 = m.spawn()
    seen = []
    for _ in range(5):
        uid, _ = m.create(e1, 8)
        seen.append(uid)
        m.destroy(e1, uid)
    assert seen == sorted(set(seen))
    # Oracle: every uid in a create record of the full trace is fresh.
    creates = [int(e.value) for e in m.trace if e.instr == "create" and e.code == "SUCCESS"]
    assert len(creates) == len(set(creates))


# -- transfer -------------------------------------------------------------

def test_proxy_chain_single_holder_at_each_step(m):
    s, p, d = m.spawn(), m.spawn(), m.spawn()
    uid, _ = m.create(s, 64)
    m.share(s, uid, p, P("rw-l"))
    m.share(s, uid, d, P("r--l"))
    holders = [m.state.lock_holder(uid)]
    assert m.transfer(s, uid, p).ok
    holders.append(m.state.lock_holder(uid))
    assert m.transfer(p, uid, d).ok
    holders.append(m.state.lock_holder(uid))
    assert holders == [s, p, d]
    [sig] = m.poll_signals(d)
    assert (sig.kind, sig.actor) == (SignalKind.TransferReceived, p)


def test_transfer_without_lock(trio):
    m, e1, e2, e3, uid = _shared(trio)
    assert m.transfer(e2, uid, e1) is ElErr.ERR_LOCK_HELD


def test_transfer_to_accessor_without_lock_bit(trio):
    m, e1, e2, e3, uid = _shared(trio, perm="rw--")
    m.change(e1, uid, P("rw-l"))
    assert m.transfer(e1, uid, e2) is ElErr.ERR_EXCEEDS_MAX


def test_strict_transfer_requires_mapping():
    m = Elasticlave(Config(strict_transfer_map=True))
    e1, e2 = m.spawn(), m.spawn()
    uid, _ = m.create(e1, 16)
    m.share(e1, uid, e2, P("rw-l"))
    assert m.transfer(e1, uid, e2) is ElErr.ERR_NOT_MAPPED
    m.map(e2, 0x1000, uid)
    assert m.transfer(e1, uid, e2).ok


# -- memory access --------------------------------------------------------

def test_one_way_producer_consumer_bytes(trio):
    m, e1, e2, e3, uid = trio
    m.share(e1, uid, e2, P("r---"))
    m.change(e1, uid, P("rw--"))
    m.change(e2, uid, P("r---"))
    m.map(e1, 0x1000, uid)
    m.map(e2, 0x5000, uid)
    assert m.write(e1, 0x1010, 0xAB).ok
    assert m.read(e2, 0x5010) == (0xAB, ElErr.SUCCESS)
    assert m.write(e2, 0x5010, 1) is ElErr.ERR_FAULT


def test_access_blocked_while_other_holds_lock(trio):
    m, e1, e2, e3, uid = _shared(trio, perm="rw--")
    m.change(e2, uid, P("rw--"))
    m.map(e2, 0x5000, uid)
    m.change(e1, uid, P("rw-l"))
    assert m.read(e2, 0x5000) == (None, ElErr.ERR_FAULT)
    m.change(e1, uid, P("rw--"))
    assert m.read(e2, 0x5000) == (0, ElErr.SUCCESS)


def test_execute_is_check_only(trio):
    m, e1, e2, e3, uid = trio
    m.map(e1, 0x1000, uid)
    assert m.execute(e1, 0x1000).ok
    m.change(e1, uid, P("rw--"))
    assert m.execute(e1, 0x1000) is ElErr.ERR_FAULT


def test_block_access_cannot_span_mappings(m):
    e1 = m.spawn()
    a, _ = m.create(e1, 16)
    b, _ = m.create(e1, 16)
    m.map(e1, 0x1000, a)
    m.map(e1, 0x1010, b)
    assert m.read_block(e1, 0x1008, 16) == (None, ElErr.ERR_FAULT)
    assert m.write_block(e1, 0x1000, bytes(range(16))).ok
    assert m.read_block(e1, 0x1000, 16)[0] == bytes(range(16))


# -- signals --------------------------------------------------------------

def test_poll_empty(m):
    assert m.poll_signals(m.spawn()) == []


def test_lock_acquisitions_arrive_in_order(m):
    owner, a, b = m.spawn(), m.spawn(), m.spawn()
    uid, _ = m.create(owner, 16)
    m.share(owner, uid, a, P("---l"))
    m.share(owner, uid, b, P("---l"))
    m.change(owner, uid, NONE)
    m.poll_signals(owner)
    m.change(a, uid, P("---l"))
    m.change(a, uid, NONE)
    m.change(b, uid, P("---l"))
    got = [(s.kind, s.actor) for s in m.poll_signals(owner) if s.kind is SignalKind.LockAcquired]
    # Oracle: the order of successful lock-setting change events in the trace.
    expected = [(SignalKind.LockAcquired, e.caller) for e in m.trace
                if e.instr == "change" and e.code == "SUCCESS" and e.arg("perm").endswith("l") and e.caller != owner]
    assert got == expected == [(SignalKind.LockAcquired, a), (SignalKind.LockAcquired, b)]


def test_mask_drops_and_unmask_restores(trio):
    m, e1, e2, e3, uid = _shared(trio)
    m.mask_signals(e1, {SignalKind.LockAcquired})
    m.change(e2, uid, P("rw-l"))
    assert m.poll_signals(e1) == []
    m.mask_signals(e1, set())
    m.change(e2, uid, P("rw--"))
    m.change(e2, uid, P("rw-l"))
    assert [s.kind for s in m.poll_signals(e1)] == [SignalKind.LockReleased, SignalKind.LockAcquired]


def test_mask_is_per_target(trio):
    m, e1, e2, e3, uid = trio
    m.share(e1, uid, e2, P("r---"))
    m.map(e2, 0x1000, uid)
    m.mask_signals(e1, set(SignalKind))
    m.destroy(e1, uid)
    assert [s.kind for s in m.poll_signals(e2)] == [SignalKind.RegionDestroyed]


# -- trace ----------------------------------------------------------------

def test_trace_roundtrip(trio):
    m, e1, e2, e3, uid = trio
    m.share(e1, uid, e2, P("rw-l"))
    m.transfer(e1, uid, e2)
    m.map(e2, 0x1000, uid)
    m.read(e2, 0x1000)
    text = "".join(e.format() + "\n" for e in m.trace)
    assert parse_trace(text) == m.trace
    transfer = next(e for e in m.trace if e.instr == "transfer")
    assert transfer.signals == (f"LockReleased(uid={uid},actor={e1})>{e1}",
                                f"LockAcquired(uid={uid},actor={e2})>{e1}",
                                f"TransferReceived(uid={uid},actor={e1})>{e2}")
    assert text.splitlines()[0].split("\t") == ["0", "0", "spawn", "-", "SUCCESS:1", "-"]


def test_access_enum_bits():
    assert [a.bit for a in Access] == ["r", "w", "x"]


# -- properties -----------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(5, 60))
def test_random_programs_keep_invariants(seed, steps):
    import random
    rng = random.Random(seed)
    m = Elasticlave(Config())
    for _ in range(3):
        m.spawn()
    for _ in range(steps):
        p = rng.choice(sorted(m.state.enclaves))
        before = m.state.key()
        code, _ = apply_op(m, p, rng.choice(adversary_moves(m.state, p)))
        if not code.ok:
            assert m.state.key() == before
        assert check_state(m.state) == []
        for acc in m.state.access.values():
            assert sum(e.cur.has("l") for e in acc.values()) <= 1


@pytest.mark.parametrize("row", transition_table.ROWS,
                         ids=lambda r: f"{r.instr}-{r.clause}-{'sat' if r.satisfied else 'viol'}")
def test_transition_table(row):
    assert transition_table.run_row(row) is None


def test_transition_table_covers_every_clause():
    assert transition_table.missing_clauses() == []
