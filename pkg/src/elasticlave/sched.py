"""Deterministic discrete-time scheduler for coroutine-style enclave programs.

An actor is a generator.  It yields either an ``int`` (ticks consumed by the
step it just performed) or a :class:`Wait` (block until the predicate holds).
The runnable actor with the earliest ready time goes next; ties are broken
round-robin, or by a seeded shuffle when ``seed`` is given.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Generator, Iterable

from .errors import ElErr, WorkloadAbort

Program = Generator[object, None, None]


@dataclass
class Wait:
    until: Callable[[], bool]


@dataclass
class _Actor:
    name: str
    gen: Program
    ready_at: int = 0
    waiting: Wait | None = None
    finished_at: int | None = None


class Deadlock(WorkloadAbort):
    def __init__(self, names: Iterable[str]):
        super().__init__(f"deadlock: blocked actors {sorted(names)}", ElErr.ERR_FAULT)


class Scheduler:
    def __init__(self, seed: int | None = None, max_ticks: int = 50_000_000):
        self.actors: list[_Actor] = []
        self.now = 0
        self.steps = 0
        self.max_ticks = max_ticks
        self._rng = random.Random(seed) if seed is not None else None
        self._rr = 0

    def spawn(self, name: str, gen: Program) -> None:
        self.actors.append(_Actor(name, gen, ready_at=self.now))

    def finished(self, name: str) -> bool:
        return any(a.name == name and a.finished_at is not None for a in self.actors)

    def finish_time(self, name: str) -> int | None:
        for a in self.actors:
            if a.name == name:
                return a.finished_at
        return None

    def _pick(self) -> _Actor | None:
        live = [a for a in self.actors if a.finished_at is None]
        runnable = []
        for a in live:
            if a.waiting is not None:
                if not a.waiting.until():
                    continue
                a.waiting = None
                a.ready_at = max(a.ready_at, self.now)
            runnable.append(a)
        if not runnable:
            if live:
                raise Deadlock(a.name for a in live)
            return None
        t = min(a.ready_at for a in runnable)
        tied = [a for a in runnable if a.ready_at == t]
        if self._rng is not None:
            return self._rng.choice(tied)
        order = sorted(tied, key=lambda a: (self.actors.index(a) - self._rr) % len(self.actors))
        self._rr = (self.actors.index(order[0]) + 1) % len(self.actors)
        return order[0]

    def run(self) -> int:
        """Run to completion; returns the final simulated time."""
        while True:
            actor = self._pick()
            if actor is None:
                return self.now
            self.now = max(self.now, actor.ready_at)
            if self.now > self.max_ticks:
                raise WorkloadAbort("tick budget exhausted", ElErr.ERR_FAULT)
            try:
                out = next(actor.gen)
            except StopIteration:
                actor.finished_at = self.now
                continue
            self.steps += 1
            if isinstance(out, Wait):
                actor.waiting = out
                # Waiting costs a tick so blocked actors never starve the clock.
                actor.ready_at = self.now + 1
            else:
                actor.ready_at = self.now + int(out)
