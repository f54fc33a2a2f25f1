import pytest

from elasticlave import Config, Elasticlave
from elasticlave.perm import Permission

P = Permission.parse


@pytest.fixture
def m():
    return Elasticlave(Config())


@pytest.fixture
def trio(m):
    """Machine with enclaves E1, E2, E3 and a 4 KiB region owned by E1."""
    e1, e2, e3 = m.spawn(), m.spawn(), m.spawn()
    uid, code = m.create(e1, 4096)
    assert code.ok
    return m, e1, e2, e3, uid
