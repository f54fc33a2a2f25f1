"""Tab-separated transition log.

One line per executed instruction, fields in this order::

    step  caller  instr  args  result  signals

* ``step``: 0-based index of the transition.
* ``caller``: enclave id of the invoking principal (0 is the OS).
* ``instr``: instruction name (``create``, ``map``, ..., ``mem_access``).
* ``args``: comma-separated ``key=value`` pairs, or ``-`` when empty.
* ``result``: error code name, optionally ``CODE:value`` when the
  instruction returns a value (the new uid for ``create``, the byte read by
  ``mem_access``).
* ``signals``: ``;``-separated ``Kind(uid=..,actor=..)>target`` records for
  every signal queued by the transition, or ``-``.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class TraceEntry:
    step: int
    caller: int
    instr: str
    args: tuple[tuple[str, str], ...]
    result: str
    signals: tuple[str, ...] = field(default=())

    def arg(self, key: str) -> str:
        for k, v in self.args:
            if k == key:
                return v
        raise KeyError(key)

    @property
    def code(self) -> str:
        return self.result.split(":", 1)[0]

    @property
    def value(self) -> str | None:
        parts = self.result.split(":", 1)
        return parts[1] if len(parts) == 2 else None

    def format(self) -> str:
        args = ",".join(f"{k}={v}" for k, v in self.args) or "-"
        sigs = ";".join(self.signals) or "-"
        return "\t".join((str(self.step), str(self.caller), self.instr, args, self.result, sigs))


def parse_line(line: str) -> TraceEntry:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 6:
        raise ValueError(f"trace line needs 6 tab-separated fields, got {len(fields)}: {line!r}")
    step, caller, instr, args, result, sigs = fields
    pairs: list[tuple[str, str]] = []
    if args != "-":
        for item in args.split(","):
            key, sep, value = item.partition("=")
            if not sep:
                raise ValueError(f"malformed argument {item!r}")
            pairs.append((key, value))
    signals = () if sigs == "-" else tuple(sigs.split(";"))
    return TraceEntry(int(step), int(caller), instr, tuple(pairs), result, signals)


def format_trace(entries) -> str:
    return "".join(e.format() + "\n" for e in entries)


def parse_trace(text: str) -> list[TraceEntry]:
    return [parse_line(line) for line in text.splitlines() if line.strip()]
