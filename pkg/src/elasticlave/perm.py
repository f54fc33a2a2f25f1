"""Region permissions: subsets of {r, w, x, l} ordered by inclusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

_BITS = (("r", 1), ("w", 2), ("x", 4), ("l", 8))
_BIT_OF = dict(_BITS)


@dataclass(frozen=True, slots=True)
class Permission:
    """A permission set encoded as a 4-bit mask.

    Comparison operators implement the lattice order (subset inclusion),
    so ``a <= b`` holds iff every bit of ``a`` is also in ``b``.  Two
    permissions may be incomparable; there is deliberately no total order.
    """

    bits: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.bits <= 0xF:
            raise ValueError(f"permission mask out of range: {self.bits!r}")

    @classmethod
    def parse(cls, text: str) -> "Permission":
        """Parse the positional form ``d_r d_w d_x d_l`` (e.g. ``rw-l``)."""
        if len(text) != 4:
            raise ValueError(f"permission must have 4 positions: {text!r}")
        bits = 0
        for (name, mask), ch in zip(_BITS, text):
            if ch == name:
                bits |= mask
            elif ch != "-":
                raise ValueError(f"bad permission position {ch!r} in {text!r}")
        return cls(bits)

    @classmethod
    def of(cls, *names: str) -> "Permission":
        bits = 0
        for name in names:
            bits |= _BIT_OF[name]
        return cls(bits)

    @classmethod
    def universe(cls) -> Iterator["Permission"]:
        """All 16 elements of the lattice, bottom first."""
        return (cls(b) for b in range(16))

    def has(self, name: str) -> bool:
        return bool(self.bits & _BIT_OF[name])

    def __contains__(self, name: str) -> bool:
        return self.has(name)

    def with_(self, name: str) -> "Permission":
        return Permission(self.bits | _BIT_OF[name])

    def without(self, name: str) -> "Permission":
        return Permission(self.bits & ~_BIT_OF[name])

    def __or__(self, other: "Permission") -> "Permission":
        return Permission(self.bits | other.bits)

    def __and__(self, other: "Permission") -> "Permission":
        return Permission(self.bits & other.bits)

    def __sub__(self, other: "Permission") -> "Permission":
        return Permission(self.bits & ~other.bits)

    def __le__(self, other: "Permission") -> bool:
        return self.bits & ~other.bits == 0

    def __ge__(self, other: "Permission") -> bool:
        return other <= self

    def __lt__(self, other: "Permission") -> bool:
        return self <= other and self != other

    def __gt__(self, other: "Permission") -> bool:
        return other < self

    def __bool__(self) -> bool:
        return self.bits != 0

    def __str__(self) -> str:
        return "".join(name if self.bits & mask else "-" for name, mask in _BITS)

    def __repr__(self) -> str:
        return f"Permission('{self}')"


NONE = Permission(0)
ALL = Permission(0xF)
RWX = Permission.parse("rwx-")
