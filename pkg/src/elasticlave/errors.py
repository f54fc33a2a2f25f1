from enum import Enum


class ElErr(Enum):
    """Result codes of security instructions.  Anything but SUCCESS is a no-op."""

    SUCCESS = 0
    ERR_NO_REGION = 1
    ERR_NO_ENCLAVE = 2
    ERR_NOT_OWNER = 3
    ERR_NOT_ACCESSOR = 4
    ERR_EXCEEDS_MAX = 5
    ERR_LOCK_HELD = 6
    ERR_OVERLAP = 7
    ERR_NOT_MAPPED = 8
    ERR_ALREADY_SHARED = 9
    ERR_PMP_EXHAUSTED = 10
    ERR_FAULT = 11

    @property
    def ok(self) -> bool:
        return self is ElErr.SUCCESS


class WorkloadAbort(RuntimeError):
    """A workload instruction returned an unexpected error."""

    def __init__(self, what: str, code: ElErr):
        super().__init__(f"{what} -> {code.name}")
        self.code = code


class EnforcementMismatch(AssertionError):
    """The PMP view and the permission matrix disagreed on an access."""
