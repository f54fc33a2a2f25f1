from hypothesis import given
from hypothesis import strategies as st

from elasticlave.perm import ALL, NONE, Permission

perms = st.integers(0, 15).map(Permission)


def test_universe_has_sixteen_elements():
    assert len(set(Permission.universe())) == 16
    assert min(Permission.universe(), key=lambda p: p.bits) == NONE


def test_rendering_positions():
    assert str(Permission.parse("rw-l")) == "rw-l"
    assert str(NONE) == "----"
    assert str(ALL) == "rwxl"
    assert str(Permission.of("x")) == "--x-"


def test_parse_rejects_misplaced_bits():
    import pytest
    for bad in ("wr--", "rwx", "rwxlx", "abcd"):
        with pytest.raises(ValueError):
            Permission.parse(bad)


def test_incomparable_elements():
    r, w = Permission.parse("r---"), Permission.parse("-w--")
    assert not r <= w and not w <= r


@given(perms)
def test_render_roundtrip(a):
    assert Permission.parse(str(a)) == a


@given(perms)
def test_reflexive(a):
    assert a <= a


@given(perms, perms)
def test_antisymmetric(a, b):
    if a <= b and b <= a:
        assert a == b


@given(perms, perms, perms)
def test_transitive(a, b, c):
    if a <= b and b <= c:
        assert a <= c


@given(perms, perms)
def test_order_is_subset(a, b):
    as_set = {c for c in "rwxl" if a.has(c)}
    bs_set = {c for c in "rwxl" if b.has(c)}
    assert (a <= b) == (as_set <= bs_set)


@given(perms, perms)
def test_join_meet_bounds(a, b):
    assert a <= a | b and b <= a | b
    assert a & b <= a and a & b <= b


@given(perms, perms, perms)
def test_join_is_least_upper_bound(a, b, c):
    if a <= c and b <= c:
        assert a | b <= c


@given(perms, perms)
def test_absorption(a, b):
    assert a | (a & b) == a
    assert a & (a | b) == a


@given(perms)
def test_bounds(a):
    assert NONE <= a <= ALL
