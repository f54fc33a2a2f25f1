"""Bounded exhaustive interleaving explorer.

Programs are line-oriented.  Blank lines and ``#`` comments are ignored::

    enclaves S P D A          # spawned in this order; OS is always present
    adversary A 4             # A gets 4 wildcard steps
    maxdepth 14
    setup S create R 16       # deterministic prefix, not counted in depth
    S change R rw-l @begin    # honest steps, one sequential list per actor
    P await TransferReceived R S
    P read 0x2000 expect=0x11

Honest instruction forms: ``create VAR SIZE``, ``map VADDR VAR``,
``unmap VADDR VAR``, ``share VAR ENCLAVE PERM``, ``change VAR PERM``,
``destroy VAR``, ``transfer VAR ENCLAVE``, ``read VADDR [expect=BYTE]``,
``write VADDR BYTE``, ``execute VADDR``, ``poll``, ``mask KIND|KIND``
(``none`` unmasks), ``await KIND VAR FROM`` (enabled once a matching
signal is pending; executes ``poll_signals``), and ``ADV_ANY`` (one more
wildcard step for that actor).  ``@begin``/``@end`` delimit the
serialized chain on the first region argument of the ``@begin`` step.

An honest actor aborts on its first non-SUCCESS step.  Adversary wildcard
steps range over every instruction applied to live handles.
"""

from __future__ import annotations

import random
import shlex
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .core import OS_ID, Access, Config, Elasticlave, SignalKind, SystemState
from .errors import ElErr, EnforcementMismatch
from .perm import ALL, RWX, Permission
from .spatial import SpatialMemory
from .trace import TraceEntry, format_trace, parse_trace

HARD_DEPTH_LIMIT = 40
ADV_VADDRS = (0xA00000, 0xA00008)
ADV_CREATE_SIZE = 16
ADV_BYTE = 0xEE


class ProgramError(ValueError):
    """Malformed program text."""


class ExplorationError(ValueError):
    """Configuration outside the explorer's bounds."""


class ReplayDivergence(AssertionError):
    """Re-executing a trace produced a different result."""


@dataclass(frozen=True)
class Step:
    actor: str
    op: str
    args: tuple[str, ...]
    tags: frozenset[str] = frozenset()
    expect: int | None = None
    line: int = 0


@dataclass
class Program:
    enclaves: list[str] = field(default_factory=list)
    setup: list[Step] = field(default_factory=list)
    honest: dict[str, list[Step]] = field(default_factory=dict)
    adversaries: dict[str, int] = field(default_factory=dict)
    max_depth: int = 14
    name: str = ""

    @property
    def names(self) -> list[str]:
        return ["OS"] + self.enclaves


_ARITY = {
    "create": 2, "map": 2, "unmap": 2, "share": 3, "change": 2, "destroy": 1,
    "transfer": 2, "read": 1, "write": 2, "execute": 1, "poll": 0, "mask": 1, "await": 3,
}


def parse_program(text: str, name: str = "") -> Program:
    prog = Program(name=name)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = shlex.split(line)
        head = toks[0]
        try:
            if head == "enclaves":
                prog.enclaves = toks[1:]
                continue
            if head == "adversary":
                prog.adversaries[toks[1]] = prog.adversaries.get(toks[1], 0) + int(toks[2])
                continue
            if head == "maxdepth":
                prog.max_depth = int(toks[1])
                continue
        except (IndexError, ValueError) as exc:
            raise ProgramError(f"line {lineno}: {raw.strip()!r}: {exc}") from None
        is_setup = head == "setup"
        if is_setup:
            toks = toks[1:]
        if len(toks) < 2:
            raise ProgramError(f"line {lineno}: expected '<actor> <instr> ...'")
        actor, op, rest = toks[0], toks[1], toks[2:]
        if actor not in prog.names:
            raise ProgramError(f"line {lineno}: unknown actor {actor!r}")
        if op == "ADV_ANY" and not is_setup:
            prog.adversaries[actor] = prog.adversaries.get(actor, 0) + 1
            continue
        if op not in _ARITY:
            raise ProgramError(f"line {lineno}: unknown instruction {op!r}")
        tags = frozenset(t[1:] for t in rest if t.startswith("@"))
        expect = None
        args = []
        for t in rest:
            if t.startswith("@"):
                continue
            if t.startswith("expect="):
                expect = int(t[7:], 0)
            else:
                args.append(t)
        if len(args) != _ARITY[op]:
            raise ProgramError(f"line {lineno}: {op} takes {_ARITY[op]} arguments, got {len(args)}")
        step = Step(actor, op, tuple(args), tags, expect, lineno)
        if is_setup:
            prog.setup.append(step)
        else:
            prog.honest.setdefault(actor, []).append(step)
    for adv in prog.adversaries:
        if adv not in prog.names:
            raise ProgramError(f"unknown adversary {adv!r}")
    _check_names(prog)
    return prog


_REGION_ARG = {"map": 1, "unmap": 1, "share": 0, "change": 0, "destroy": 0, "transfer": 0, "await": 1}
_ACTOR_ARG = {"share": 1, "transfer": 1, "await": 2}


def _check_names(prog: Program) -> None:
    steps = prog.setup + [s for seq in prog.honest.values() for s in seq]
    regions = {s.args[0] for s in steps if s.op == "create"}
    actors = set(prog.names) | {"OS"}
    for s in steps:
        if s.op in _REGION_ARG and s.args[_REGION_ARG[s.op]] not in regions:
            raise ProgramError(f"line {s.line}: region {s.args[_REGION_ARG[s.op]]!r} is never created")
        if s.op in _ACTOR_ARG and s.args[_ACTOR_ARG[s.op]] not in actors:
            raise ProgramError(f"line {s.line}: unknown enclave {s.args[_ACTOR_ARG[s.op]]!r}")


# -- state invariants ------------------------------------------------------

def check_state(st: SystemState) -> list[tuple[str, str]]:
    """Invariants that must hold in every reachable state."""
    out = []
    for uid, acc in st.access.items():
        if uid not in st.regions:
            out.append(("structure", f"permissions for dead region {uid}"))
            continue
        holders = [p for p, e in acc.items() if e.cur.has("l")]
        if len(holders) > 1:
            out.append(("lock_exclusivity", f"region {uid} locked by {holders}"))
        for p, e in acc.items():
            if not e.cur <= e.max:
                out.append(("cur_le_max", f"region {uid} enclave {p}: cur {e.cur} > max {e.max}"))
            if p not in st.enclaves:
                out.append(("structure", f"region {uid} grants unknown enclave {p}"))
        own = acc.get(st.owner(uid))
        if own is None or own.max != ALL:
            out.append(("structure", f"region {uid} owner entry {own}"))
    for uid, rec in st.regions.items():
        if uid not in st.access:
            out.append(("structure", f"region {uid} has no permission row"))
        mem = st.memory.get(uid)
        if mem is None or len(mem) != rec.size:
            out.append(("structure", f"region {uid} memory shape"))
    if set(st.memory) != set(st.regions):
        out.append(("structure", "memory for dead regions"))
    for p, view in st.views.items():
        spans = []
        for vaddr, uid in view.items():
            if uid not in st.regions:
                out.append(("structure", f"enclave {p} maps dead region {uid}"))
                continue
            if p not in st.access[uid]:
                out.append(("structure", f"enclave {p} maps region {uid} without access"))
            spans.append((vaddr, vaddr + st.size(uid)))
        spans.sort()
        for (_, end), (start, _) in zip(spans, spans[1:]):
            if start < end:
                out.append(("structure", f"enclave {p} has overlapping mappings"))
    return out


# -- concrete operations ---------------------------------------------------

def apply_op(m: Elasticlave, p: int, op: tuple):
    """Execute a concrete operation; returns ``(code, value)``."""
    kind = op[0]
    if kind == "create":
        uid, code = m.create(p, op[1])
        return code, uid
    if kind == "map":
        return m.map(p, op[1], op[2]), None
    if kind == "unmap":
        return m.unmap(p, op[1], op[2]), None
    if kind == "share":
        return m.share(p, op[1], op[2], op[3]), None
    if kind == "change":
        return m.change(p, op[1], op[2]), None
    if kind == "destroy":
        return m.destroy(p, op[1]), None
    if kind == "transfer":
        return m.transfer(p, op[1], op[2]), None
    if kind == "read":
        value, code = m.read(p, op[1])
        return code, value
    if kind == "write":
        return m.write(p, op[1], op[2]), None
    if kind == "execute":
        return m.execute(p, op[1]), None
    if kind in ("poll", "await"):
        return ElErr.SUCCESS, m.poll_signals(p)
    if kind == "mask":
        return m.mask_signals(p, op[1]), None
    raise ValueError(f"unknown op {kind!r}")


def _parse_kinds(text: str) -> frozenset[SignalKind]:
    if text == "none":
        return frozenset()
    return frozenset(SignalKind(k) for k in text.split("|"))


def _resolve(step: Step, ids: dict[str, int], env: dict[str, int]) -> tuple:
    """Turn a program step into a concrete op; unbound variables raise KeyError."""
    a = step.args
    op = step.op
    if op == "create":
        return ("create", int(a[1], 0))
    if op in ("map", "unmap"):
        return (op, int(a[0], 0), env[a[1]])
    if op == "share":
        return ("share", env[a[0]], ids[a[1]], Permission.parse(a[2]))
    if op == "change":
        return ("change", env[a[0]], Permission.parse(a[1]))
    if op == "destroy":
        return ("destroy", env[a[0]])
    if op == "transfer":
        return ("transfer", env[a[0]], ids[a[1]])
    if op in ("read", "execute"):
        return (op, int(a[0], 0))
    if op == "write":
        return ("write", int(a[0], 0), int(a[1], 0))
    if op == "poll":
        return ("poll",)
    if op == "mask":
        return ("mask", _parse_kinds(a[0]))
    if op == "await":
        return ("await", SignalKind(a[0]), env[a[1]], ids[a[2]])
    raise ProgramError(f"line {step.line}: cannot resolve {op}")


def adversary_moves(st: SystemState, p: int) -> list[tuple]:
    """Every type-correct instruction over the handles live in ``st``."""
    moves: list[tuple] = []
    uids = sorted(st.regions)
    targets = sorted(st.enclaves)
    perms = Permission.universe()
    for uid in uids:
        moves += [("change", uid, perm) for perm in perms]
        moves += [("map", va, uid) for va in ADV_VADDRS]
        moves += [("transfer", uid, o) for o in targets]
        moves.append(("destroy", uid))
        moves += [("share", uid, o, perm) for o in targets for perm in perms]
    for vaddr, uid in sorted(st.views.get(p, {}).items()):
        moves.append(("unmap", vaddr, uid))
        moves += [("read", vaddr), ("write", vaddr, ADV_BYTE), ("execute", vaddr)]
    moves.append(("create", ADV_CREATE_SIZE))
    moves.append(("poll",))
    moves.append(("mask", frozenset(SignalKind)))
    moves.append(("mask", frozenset()))
    return moves


def _canon(st: SystemState, env: dict[str, int], ledger: dict) -> tuple:
    """State key with region ids replaced by their rank among live regions."""
    rank = {u: i for i, u in enumerate(sorted(st.regions))}

    def c(u):
        return rank.get(u, -1)

    return (
        tuple(sorted(st.enclaves)),
        tuple(sorted((c(u), r.owner, r.size) for u, r in st.regions.items())),
        tuple(sorted((c(u), p, e.max.bits, e.cur.bits)
                     for u, acc in st.access.items() for p, e in acc.items())),
        tuple(sorted((c(u), bytes(mem)) for u, mem in st.memory.items())),
        tuple(sorted((p, v, c(u)) for p, view in st.views.items() for v, u in view.items())),
        tuple(sorted((p, tuple((s.kind.value, c(s.region), s.actor) for s in q))
                     for p, q in st.pending.items() if q)),
        tuple(sorted((p, tuple(sorted(k.value for k in mk))) for p, mk in st.masks.items() if mk)),
        tuple(sorted((k, c(u)) for k, u in env.items())),
        tuple(sorted((c(u), p, bits) for (u, p), bits in ledger.items() if u in rank)),
    )


# -- exploration -----------------------------------------------------------

@dataclass
class Violation:
    invariant: str
    detail: str
    trace: list[str]

    def to_dict(self) -> dict:
        return {"invariant": self.invariant, "detail": self.detail, "trace": self.trace}


@dataclass
class Verdict:
    states_explored: int = 0
    unique_states: int = 0
    violations: list[Violation] = field(default_factory=list)
    depth_exceeded: bool = False
    max_depth: int = 0
    name: str = ""
    completed: int = 0    # leaves where every honest actor finished
    aborted: int = 0      # leaves where some honest actor aborted or stayed blocked

    @property
    def status(self) -> str:
        return "fail" if self.violations else "pass"

    def merge(self, other: "Verdict") -> "Verdict":
        vs = sorted(self.violations + other.violations, key=lambda v: (v.invariant, v.trace))
        return Verdict(self.states_explored + other.states_explored,
                       self.unique_states + other.unique_states, vs,
                       self.depth_exceeded or other.depth_exceeded,
                       max(self.max_depth, other.max_depth), self.name or other.name,
                       self.completed + other.completed, self.aborted + other.aborted)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status,
            "states_explored": self.states_explored,
            "unique_states": self.unique_states,
            "depth_exceeded": self.depth_exceeded,
            "max_depth": self.max_depth,
            "completed": self.completed,
            "aborted": self.aborted,
            "violations": [v.to_dict() for v in self.violations],
        }


@dataclass(frozen=True)
class _Node:
    pcs: tuple[int, ...]          # next step per honest actor; -1 once aborted
    budgets: tuple[int, ...]
    phase: int                    # 0 before @begin, 1 inside chain, 2 after @end, 3 aborted
    env: tuple[tuple[str, int], ...]
    chain_uid: int | None


class Explorer:
    def __init__(self, program: Program, config: Config | None = None, max_violations: int = 25):
        if program.max_depth > HARD_DEPTH_LIMIT:
            raise ExplorationError(f"max depth {program.max_depth} exceeds limit {HARD_DEPTH_LIMIT}")
        if program.max_depth < 0:
            raise ExplorationError("max depth must be >= 0")
        self.program = program
        self.config = replace(config or Config(), record_trace=True)
        self.max_violations = max_violations
        self.actors = sorted(program.honest)
        self.advs = sorted(program.adversaries)
        self.verdict = Verdict(max_depth=program.max_depth, name=program.name)
        self._visited: dict[tuple, list[tuple[tuple[int, ...], int]]] = {}

    # -- setup --

    def _boot(self):
        m = Elasticlave(self.config)
        ids = {"OS": OS_ID}
        for name in self.program.enclaves:
            ids[name] = m.spawn()
        env: dict[str, int] = {}
        ledger: dict[tuple[int, int], int] = {}
        for step in self.program.setup:
            try:
                op = _resolve(step, ids, env)
            except KeyError as exc:
                raise ProgramError(f"setup line {step.line}: {exc.args[0]!r} is not bound yet") from None
            code, value = apply_op(m, ids[step.actor], op)
            if not code.ok:
                raise ProgramError(f"setup line {step.line} failed: {code.name}")
            if step.op == "create":
                env[step.args[0]] = value
            self._update_ledger(ledger, m.trace[-1])
        self.ids = ids
        self.names = {v: k for k, v in ids.items()}
        return m, env, ledger

    @staticmethod
    def _update_ledger(ledger: dict, entry: TraceEntry) -> None:
        """Grants as recorded by successful create/share events."""
        if entry.code != ElErr.SUCCESS.name:
            return
        if entry.instr == "create":
            ledger[(int(entry.value), entry.caller)] = ALL.bits
        elif entry.instr == "share":
            key = (int(entry.arg("uid")), int(entry.arg("to")))
            ledger[key] = ledger.get(key, 0) | Permission.parse(entry.arg("perm")).bits

    # -- moves --

    def _enabled(self, m: Elasticlave, node: _Node, env: dict[str, int]):
        out = []
        st = m.state
        for i, name in enumerate(self.actors):
            pc = node.pcs[i]
            steps = self.program.honest[name]
            if pc < 0 or pc >= len(steps):
                continue
            step = steps[pc]
            p = self.ids[name]
            try:
                op = _resolve(step, self.ids, env)
            except KeyError:
                out.append(("honest", i, p, None, step))
                continue
            if op[0] == "await":
                _, kind, uid, frm = op
                if not any(s.kind is kind and s.region == uid and s.actor == frm
                           for s in st.pending.get(p, [])):
                    continue
            out.append(("honest", i, p, op, step))
        for j, name in enumerate(self.advs):
            if node.budgets[j] > 0:
                p = self.ids[name]
                out += [("adv", j, p, op, None) for op in adversary_moves(st, p)]
        return out

    def _subsumed(self, key: tuple, budgets: tuple[int, ...], depth: int) -> bool:
        seen = self._visited.setdefault(key, [])
        for b, d in seen:
            if d <= depth and all(x >= y for x, y in zip(b, budgets)):
                return True
        seen[:] = [(b, d) for b, d in seen if not (depth <= d and all(y >= x for x, y in zip(b, budgets)))]
        seen.append((budgets, depth))
        return False

    def _violate(self, m: Elasticlave, invariant: str, detail: str) -> None:
        if len(self.verdict.violations) < self.max_violations:
            self.verdict.violations.append(Violation(invariant, detail, format_trace(m.trace).splitlines()))

    # -- search --

    def run(self, root_filter=None) -> Verdict:
        m, env, ledger = self._boot()
        for inv, detail in check_state(m.state):
            self._violate(m, inv, f"after setup: {detail}")
        node = _Node(tuple(0 for _ in self.actors),
                     tuple(self.program.adversaries[a] for a in self.advs), 0,
                     tuple(sorted(env.items())), None)
        self._dfs(m, node, ledger, 0, root_filter)
        self.verdict.unique_states = sum(len(v) for v in self._visited.values())
        return self.verdict

    def _dfs(self, m: Elasticlave, node: _Node, ledger: dict, depth: int, root_filter=None) -> None:
        env = dict(node.env)
        key = _canon(m.state, env, ledger) + (node.pcs, node.phase,
                                              -1 if node.chain_uid is None else node.chain_uid in m.state.regions)
        if self._subsumed(key, node.budgets, depth):
            return
        moves = self._enabled(m, node, env)
        if not moves:
            done = all(pc == len(self.program.honest[a]) for a, pc in zip(self.actors, node.pcs))
            if done:
                self.verdict.completed += 1
            else:
                self.verdict.aborted += 1
            return
        if depth >= self.program.max_depth:
            self.verdict.depth_exceeded = True
            return
        snap = m.snapshot()
        pre = m.state.copy()
        pre_key = m.state.key()
        for index, move in enumerate(moves):
            if root_filter is not None and not root_filter(index):
                continue
            if len(self.verdict.violations) >= self.max_violations:
                return
            child = self._step(m, node, env, dict(ledger), move, pre, pre_key)
            self.verdict.states_explored += 1
            if child is not None:
                self._dfs(m, child[0], child[1], depth + 1)
            m.restore(snap)

    def _step(self, m: Elasticlave, node: _Node, env: dict, ledger: dict, move, pre, pre_key):
        """Apply one move and check it; returns the successor or ``None`` to prune."""
        who, idx, p, op, step = move
        pcs, budgets = list(node.pcs), list(node.budgets)
        phase, chain_uid = node.phase, node.chain_uid
        env = dict(env)
        if op is None:
            # A reference to a variable never bound: the honest actor aborts.
            pcs[idx] = -1
            return _Node(tuple(pcs), tuple(budgets), 3 if phase == 1 else phase,
                         tuple(sorted(env.items())), chain_uid), ledger
        try:
            code, value = apply_op(m, p, op)
        except EnforcementMismatch as exc:
            self._violate(m, "enforcement", str(exc))
            return None
        entry = m.trace[-1]
        problems = []
        if code.ok:
            self._update_ledger(ledger, entry)
            problems += self._check_success(pre, m.state, p, op, ledger)
        elif m.state.key() != pre_key:
            problems.append(("atomicity", f"failed {entry.instr} -> {code.name} changed state"))
        problems += check_state(m.state)
        after = _entries_dict(m.state)
        for (u, q), e in _entries(pre):
            if (u, q) in after and after[(u, q)].max != e.max:
                problems.append(("max_immutable", f"max of region {u} enclave {q} changed"))
        if who == "adv":
            budgets[idx] -= 1
            if (phase == 1 and code.ok and op[0] in ("read", "write", "execute")
                    and pre.lookup(p, op[1]) is not None and pre.lookup(p, op[1])[1] == chain_uid):
                problems.append(("serialization", f"adversary {p} {op[0]} inside the locked chain"))
        else:
            if not code.ok:
                pcs[idx] = -1
                if phase == 1:
                    phase = 3
            else:
                pcs[idx] += 1
                if step.op == "create":
                    env[step.args[0]] = value
                if step.expect is not None and value != step.expect:
                    problems.append(("serialization",
                                     f"{step.actor} read {value} expected {step.expect:#x} (line {step.line})"))
                if "begin" in step.tags and phase == 0:
                    phase = 1
                    chain_uid = next((o for o in op[1:] if isinstance(o, int) and o in pre.regions), None)
                    if op[0] in ("read", "write", "execute"):
                        hit = pre.lookup(p, op[1])
                        chain_uid = hit[1] if hit else None
                if "end" in step.tags and phase == 1:
                    phase = 2
        if problems:
            for inv, detail in problems:
                self._violate(m, inv, detail)
            return None
        return _Node(tuple(pcs), tuple(budgets), phase, tuple(sorted(env.items())), chain_uid), ledger

    def _check_success(self, pre: SystemState, post: SystemState, p: int, op: tuple, ledger: dict):
        out = []
        kind = op[0]
        if kind in ("read", "write", "execute"):
            hit = pre.lookup(p, op[1])
            if hit is None:
                out.append(("bounded_escalation", f"enclave {p} {kind} at unmapped {op[1]:#x}"))
            else:
                uid = hit[1]
                bit = Access(kind).bit
                if not Permission(ledger.get((uid, p), 0)).has(bit):
                    out.append(("bounded_escalation", f"enclave {p} {kind} on region {uid} never granted"))
                holder = pre.lock_holder(uid)
                if holder is not None and holder != p:
                    out.append(("lock_exclusivity", f"enclave {p} {kind} on region {uid} locked by {holder}"))
        elif kind == "change":
            if not op[2] <= Permission(ledger.get((op[1], p), 0)):
                out.append(("bounded_escalation", f"enclave {p} activated {op[2]} on region {op[1]}"))
        elif kind == "transfer":
            if not Permission(ledger.get((op[1], op[2]), 0)).has("l"):
                out.append(("bounded_escalation", f"lock of region {op[1]} moved to ungranted {op[2]}"))
        for (uid, q), e in _entries(post):
            if not e.cur <= Permission(ledger.get((uid, q), 0)):
                out.append(("bounded_escalation", f"enclave {q} holds {e.cur} on region {uid} beyond grants"))
        return out


def _entries(st: SystemState):
    return [((u, p), e) for u, acc in st.access.items() for p, e in acc.items()]


def _entries_dict(st: SystemState):
    return {(u, p): e for u, acc in st.access.items() for p, e in acc.items()}


def _explore_part(args) -> Verdict:
    program, config, jobs, part = args
    return Explorer(program, config).run(root_filter=lambda i: i % jobs == part)


def explore(program: Program | str, config: Config | None = None, jobs: int = 1) -> Verdict:
    """Explore every interleaving of ``program`` up to its depth bound."""
    if isinstance(program, str):
        program = parse_program(program)
    if jobs <= 1:
        return Explorer(program, config).run()
    # Partition the root's successors; the merge is order-independent.
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_explore_part, [(program, config, jobs, k) for k in range(jobs)]))
    out = Verdict(max_depth=program.max_depth, name=program.name)
    for v in parts:
        out = out.merge(v)
    return out


# -- replay ----------------------------------------------------------------

def _op_from_entry(e: TraceEntry) -> tuple:
    instr = e.instr
    if instr == "create":
        return ("create", int(e.arg("size")))
    if instr in ("map", "unmap"):
        return (instr, int(e.arg("vaddr"), 16), int(e.arg("uid")))
    if instr == "share":
        return ("share", int(e.arg("uid")), int(e.arg("to")), Permission.parse(e.arg("perm")))
    if instr == "change":
        return ("change", int(e.arg("uid")), Permission.parse(e.arg("perm")))
    if instr == "destroy":
        return ("destroy", int(e.arg("uid")))
    if instr == "transfer":
        return ("transfer", int(e.arg("uid")), int(e.arg("to")))
    if instr == "mem_access":
        kind = e.arg("kind")
        if kind == "write":
            return ("write", int(e.arg("vaddr"), 16), int(e.arg("data"), 16))
        return (kind, int(e.arg("vaddr"), 16))
    if instr == "poll_signals":
        return ("poll",)
    if instr == "mask_signals":
        return ("mask", _parse_kinds(e.arg("kinds")))
    raise ReplayDivergence(f"step {e.step}: cannot replay {instr!r}")


def replay_machine(trace, config: Config | None = None) -> Elasticlave:
    """Re-execute a trace on a fresh machine, checking every recorded outcome."""
    if isinstance(trace, str):
        trace = parse_trace(trace)
    trace = list(trace)
    m = Elasticlave(replace(config or Config(), record_trace=True))
    for e in trace:
        if e.instr == "spawn":
            m.spawn()
        elif e.instr == "read_block":
            m.read_block(e.caller, int(e.arg("vaddr"), 16), int(e.arg("len")))
        elif e.instr == "write_block":
            data = e.arg("data")
            m.write_block(e.caller, int(e.arg("vaddr"), 16), b"" if data == "empty" else bytes.fromhex(data))
        else:
            apply_op(m, e.caller, _op_from_entry(e))
        got = m.trace[-1]
        if (got.instr, got.caller, got.result, got.signals) != (e.instr, e.caller, e.result, e.signals):
            raise ReplayDivergence(f"step {e.step}: recorded {e.format()!r}, replayed {got.format()!r}")
    return m


def replay(trace, config: Config | None = None) -> SystemState:
    return replay_machine(trace, config).state


# -- random walks ---------------------------------------------------------

def random_walk(seed: int, steps: int, config: Config | None = None) -> Elasticlave:
    """Drive a machine with ``steps`` random type-correct instructions."""
    rng = random.Random(seed)
    m = Elasticlave(replace(config or Config(), record_trace=True))
    for _ in range(rng.randint(2, 4)):
        m.spawn()
    for _ in range(steps):
        p = rng.choice(sorted(m.state.enclaves))
        apply_op(m, p, rng.choice(adversary_moves(m.state, p)))
    return m


def check_random_walk(seed: int, steps: int, config: Config | None = None) -> list[str]:
    """Invariants after every step of a random walk, plus replay determinism."""
    rng = random.Random(seed)
    m = Elasticlave(replace(config or Config(), record_trace=True))
    problems = []
    for _ in range(rng.randint(2, 4)):
        m.spawn()
    for i in range(steps):
        p = rng.choice(sorted(m.state.enclaves))
        before = m.state.key()
        try:
            code, _ = apply_op(m, p, rng.choice(adversary_moves(m.state, p)))
        except EnforcementMismatch as exc:
            problems.append(f"step {i}: enforcement: {exc}")
            break
        if not code.ok and m.state.key() != before:
            problems.append(f"step {i}: failed {m.trace[-1].instr} changed state")
        problems += [f"step {i}: {inv}: {d}" for inv, d in check_state(m.state)]
    text = format_trace(m.trace)
    try:
        first, second = replay(text, config).key(), replay(text, config).key()
    except ReplayDivergence as exc:
        problems.append(f"replay: {exc}")
    else:
        if not first == second == m.state.key():
            problems.append("replay reached a different state")
    return problems


# -- spatial emulation -----------------------------------------------------

@dataclass
class EmulationResult:
    seed: int
    steps: int
    mismatches: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches


def check_spatial_emulation(seed: int, steps: int, public: bool = True) -> EmulationResult:
    """Run a random spatial-isolation program natively and as an emulation.

    Private regions become unshared regions; the public region is created
    by the OS and shared ``rwx-`` with every enclave.
    """
    rng = random.Random(seed)
    native = SpatialMemory()
    m = Elasticlave(Config(record_trace=False))
    enclaves = [m.spawn() for _ in range(rng.randint(1, 4))]
    principals = [OS_ID] + enclaves
    regions: list[tuple[str, int, int, set[int]]] = []   # label, vaddr, size, principals mapping it

    def vaddr_for(k: int) -> int:
        return 0x10000 * (k + 1)

    for e in enclaves:
        for _ in range(rng.randint(1, 2)):
            size = rng.randint(1, 32)
            label = f"priv{len(regions)}"
            va = vaddr_for(len(regions))
            uid, code = m.create(e, size)
            assert code.ok, code
            assert m.map(e, va, uid).ok
            native.add_private(label, e, size)
            regions.append((label, va, size, {e}))
    if public:
        size = rng.randint(1, 32)
        label = f"pub{len(regions)}"
        va = vaddr_for(len(regions))
        uid, code = m.create(OS_ID, size)
        assert code.ok, code
        assert m.change(OS_ID, uid, RWX).ok
        for e in enclaves:
            assert m.share(OS_ID, uid, e, RWX).ok
            assert m.change(e, uid, RWX).ok
        for q in principals:
            assert m.map(q, va, uid).ok
        native.add_public(label, size)
        regions.append((label, va, size, set(principals)))

    out = EmulationResult(seed, steps)
    for i in range(steps):
        q = rng.choice(principals)
        label, va, size, _ = rng.choice(regions)
        offset = rng.randrange(size + 2)
        kind = rng.choice(("read", "write", "execute"))
        data = rng.randrange(256) if kind == "write" else None
        want = native.access(q, label, offset, kind, data)
        value, code = m.mem_access(q, va + offset, Access(kind), data)
        if (value, code) != want:
            out.mismatches.append(f"step {i}: {q} {kind} {label}+{offset}: native={want} emulated={(value, code)}")
    return out


# -- built-in scenarios ----------------------------------------------------

PROXY_CHAIN = """\
enclaves S P D A
adversary A 4
maxdepth 14
setup S create R 16
setup S share R P rw-l
setup S share R D r--l
setup S share R A rw-l
setup S map 0x1000 R
setup P map 0x2000 R
setup D map 0x3000 R
setup S change R rw--
setup P change R rw--
setup D change R r---
S change R rw-l @begin
S write 0x1000 0x11
S transfer R P
P await TransferReceived R S
P read 0x2000 expect=0x11
P write 0x2000 0x22
P transfer R D
D await TransferReceived R P
D read 0x3000 expect=0x22
D change R r--- @end
"""

ESCALATION = """\
enclaves O A
adversary A 3
maxdepth 8
setup O create R 16
setup O share R A r---
setup O map 0x1000 R
setup O change R rw--
O write 0x1000 0x42
O change R rw-l
O write 0x1001 0x43
O change R rw--
"""

LOCK_EXCLUSIVITY = """\
enclaves E F A
adversary A 3
maxdepth 12
setup E create R 16
setup E share R F rw-l
setup E share R A rw-l
setup E map 0x1000 R
setup F map 0x2000 R
setup E change R rw--
setup F change R rw--
E change R rw-l @begin
E write 0x1000 0x5a
E read 0x1000 expect=0x5a
E change R rw-- @end
F change R rw-l
F write 0x2000 0x6b
F change R rw--
"""

OS_ADVERSARY = """\
enclaves C S
adversary OS 3
maxdepth 11
setup C create R 16
setup C share R S rw-l
setup C map 0x1000 R
setup S map 0x2000 R
setup C change R rw-l
setup S change R rw--
C write 0x1000 0x31 @begin
C transfer R S
S await TransferReceived R C
S read 0x2000 expect=0x31
S write 0x2001 0x32
S transfer R C
C await TransferReceived R S
C read 0x1001 expect=0x32 @end
"""

SCENARIOS = {
    "proxy": PROXY_CHAIN,
    "escalation": ESCALATION,
    "lock": LOCK_EXCLUSIVITY,
    "os_adversary": OS_ADVERSARY,
}


def scenario(name: str) -> Program:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return parse_program(SCENARIOS[name], name=name)


def mutant_config(base: Config | None = None) -> Config:
    """The build with the lock check in ``change`` removed."""
    return replace(base or Config(), check_change_lock=False)
