"""R-code triplets, their binary and listing forms, and the interpreter.

A program is a flat list of ``(opcode, opn1, opn2)`` integer triplets;
unused operands are -1.  Guards are evaluated on a value stack.  Entity
operands pack a kind and an addressing mode into ``opn1``::

    opn1 = kind * 16 + mode      kind: 0 node, 1 task, 2 group
    opn2 = id, or an atom index for the @k / ~k / $k modes

The interpreter never touches the database except through
``Database.query_atom``; every effect is handed to a sink as an
``ActionRequest``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

from .model import (GROUP, NODE, STATUSES, TASK, Atom, Database, EntityRef,
                    ModelError)

HALT = STOP = 0
SET_ROLE = 1
IF = 2
FI = 3
STORE_PHASE = 4
STORE_STATUS = 5
STORE_ERRN = 6
STORE_ERRT = 7
COMPARE = 8
AND = 9
OR = 10
NOT = 11
FALSE = 12
PUSH = 13
SEND = 14
START = 15
RESTART = 16
ISOLATE = 17
ENABLE = 18
REBOOT = 19
WARN = 20
REMOVE = 21
CALL = 22
PAUSE = 23
OANEW = 24

OPNAMES = {
    STOP: "STOP", SET_ROLE: "SET_ROLE", IF: "IF", FI: "FI",
    STORE_PHASE: "STORE_PHASE", STORE_STATUS: "STORE_STATUS",
    STORE_ERRN: "STORE_ERRN", STORE_ERRT: "STORE_ERRT", COMPARE: "COMPARE",
    AND: "AND", OR: "OR", NOT: "NOT", FALSE: "FALSE", PUSH: "PUSH",
    SEND: "SEND", START: "START", RESTART: "RESTART", ISOLATE: "ISOLATE",
    ENABLE: "ENABLE", REBOOT: "REBOOT", WARN: "WARN", REMOVE: "REMOVE",
    CALL: "CALL", PAUSE: "PAUSE", OANEW: "ANEW_OA_OBJECTS",
}

# entity addressing modes
M_LIT, M_AT, M_TILDE, M_DOLLAR, M_MATCH, M_STAR = range(6)

# comparison operators carried in COMPARE.opn1
CMP_OPS = {1: "==", 2: "!=", 3: ">", 4: ">=", 5: "<", 6: "<="}
CMP_CODES = {v: k for k, v in CMP_OPS.items()}
_CMP_FN: dict[int, Callable[[int, int], bool]] = {
    1: lambda a, b: a == b, 2: lambda a, b: a != b, 3: lambda a, b: a > b,
    4: lambda a, b: a >= b, 5: lambda a, b: a < b, 6: lambda a, b: a <= b,
}

# status codes pushed before STORE_STATUS
STATUS_CODES = {name: k for k, name in enumerate(STATUSES)}
DEADLOCKED_CODE = len(STATUSES)

ROLE_MANAGER, ROLE_ASSISTANT = 0, 1
ROLE_NAMES = {ROLE_MANAGER: "Manager", ROLE_ASSISTANT: "Assistant"}

REMOVE_PHASE, REMOVE_ANY = 0, 1
# PUSH with opn2 == PUSH_FAULTY pushes the first guard-matched faulty id
PUSH_FAULTY = 1
# IF with opn1 == IF_ELIF re-arms the atom registers without nesting
IF_ELIF = 1

KIND_LISTING = {NODE: "Node", TASK: "Thread", GROUP: "Group"}

MAGIC = b"RCOD"
VERSION = 1
_HEADER = struct.Struct("<4sHI")
_TRIPLET = struct.Struct("<iii")

_ENTITY_OPS = {STORE_PHASE, STORE_STATUS, STORE_ERRN, STORE_ERRT, SEND, START,
               RESTART, ISOLATE, ENABLE, REBOOT, WARN, REMOVE}


def entity_operand(kind: int, mode: int = M_LIT) -> int:
    return kind * 16 + mode


def split_operand(opn1: int) -> tuple[int, int]:
    return opn1 // 16, opn1 % 16


@dataclass(frozen=True)
class Triplet:
    opcode: int
    opn1: int = -1
    opn2: int = -1

    @property
    def name(self) -> str:
        return OPNAMES.get(self.opcode, str(self.opcode))


@dataclass
class RcodeProgram:
    triplets: list[Triplet] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.triplets)

    def names(self) -> list[str]:
        return [t.name for t in self.triplets]

    def __eq__(self, other):
        return isinstance(other, RcodeProgram) and self.triplets == other.triplets

    def validate(self) -> None:
        """Structural checks every compiler-produced program passes."""
        if not self.triplets or self.triplets[-1] != Triplet(HALT):
            raise ValueError("program does not end with HALT")
        for pc, t in enumerate(self.triplets):
            if t.opcode == FALSE and not 0 <= t.opn1 < self.count:
                raise ValueError(f"triplet {pc}: jump target {t.opn1} out of range")


class DecodeError(ValueError):
    def __init__(self, offset: int, msg: str):
        super().__init__(f"offset {offset}: {msg}")
        self.offset = offset


def serialize(program: RcodeProgram) -> bytes:
    out = bytearray(_HEADER.pack(MAGIC, VERSION, program.count))
    for t in program.triplets:
        out += _TRIPLET.pack(t.opcode, t.opn1, t.opn2)
    return bytes(out)


def deserialize(data: bytes) -> RcodeProgram:
    if len(data) < 4 or data[:4] != MAGIC:
        raise DecodeError(0, "bad magic")
    if len(data) < _HEADER.size:
        raise DecodeError(len(data), "truncated header")
    _, version, count = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise DecodeError(4, f"unsupported version {version}")
    need = _HEADER.size + count * _TRIPLET.size
    if len(data) < need:
        raise DecodeError(len(data), f"truncated payload, expected {need} bytes")
    if len(data) > need:
        raise DecodeError(need, "trailing bytes after payload")
    trip = [Triplet(*_TRIPLET.unpack_from(data, _HEADER.size + k * _TRIPLET.size))
            for k in range(count)]
    return RcodeProgram(trip)


# ---------------------------------------------------------------- listing

def _entity_text(opn1: int, opn2: int) -> tuple[str, str]:
    kind, mode = split_operand(opn1)
    base = KIND_LISTING.get(kind, str(kind))
    if mode == M_LIT:
        return base, str(opn2)
    if mode == M_MATCH:
        return base + "@", ""
    if mode == M_STAR:
        return base + "*", ""
    return base + {M_AT: "@", M_TILDE: "~", M_DOLLAR: "$"}.get(mode, "?"), str(opn2)


def _operand_text(t: Triplet) -> tuple[str, str]:
    op, a, b = t.opcode, t.opn1, t.opn2
    if op == HALT and a == -1 and b == -1:
        return "", ""
    if op in _ENTITY_OPS or op == HALT:
        return _entity_text(a, b)
    if op == SET_ROLE:
        return str(a), ROLE_NAMES.get(b, str(b))
    if op == COMPARE:
        return CMP_OPS.get(a, str(a)), str(b)
    if op == PUSH and b == PUSH_FAULTY:
        return "FAULTY@", ""
    if op == IF:
        return ("elif" if a == IF_ELIF else ""), ""
    return ("" if a == -1 else str(a)), ("" if b == -1 else str(b))


def render_listing(program: RcodeProgram, title: str | None = None) -> str:
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'line':<7}{'rcode':<17}{'opn1':<9}opn2")
    for pc, t in enumerate(program.triplets):
        o1, o2 = _operand_text(t)
        lines.append(f"{pc:05d}  {t.name:<17}{o1:<9}{o2}".rstrip())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- interpreter

@dataclass(frozen=True)
class ActionRequest:
    verb: str
    targets: tuple[EntityRef, ...] = ()
    value: int | None = None
    args: tuple[int, ...] = ()
    subject: EntityRef | None = None
    pc: int = -1


@dataclass
class ActionLog:
    actions: list[ActionRequest] = field(default_factory=list)
    trace: list[str] = field(default_factory=list)

    def trace_text(self) -> str:
        return "".join(line + "\n" for line in self.trace)


class VmError(RuntimeError):
    def __init__(self, pc: int, msg: str):
        super().__init__(f"r-code {pc}: {msg}")
        self.pc = pc


@dataclass
class _Register:
    entity: list[EntityRef]
    members: list[EntityRef]
    match: list[EntityRef]
    satisfied: bool = False


@dataclass
class VmState:
    pc: int = 0
    stack: list[int] = field(default_factory=list)
    nest: int = 0
    frames: list[list[_Register]] = field(default_factory=list)


_VERBS = {STOP: "stop", START: "start", RESTART: "restart", ISOLATE: "isolate",
          ENABLE: "enable", REBOOT: "reboot"}
_VERB_TRACE = {"stop": "KILLING", "start": "STARTING", "restart": "RESTARTING",
               "isolate": "ISOLATING", "enable": "ENABLING", "reboot": "REBOOTING"}
_KIND_WORD = {NODE: "NODE", TASK: "TASK", GROUP: "GROUP"}


def _targets_text(targets) -> str:
    return ", ".join(f"{_KIND_WORD[e.kind]} {e.id}" for e in targets) or "nothing"


class Interpreter:
    """Runs one program against one database snapshot.

    ``execute`` may not be re-entered while a run is in flight.
    """

    def __init__(self, program: RcodeProgram, callbacks: dict[int, Callable] | None = None):
        self.program = program
        self.callbacks = callbacks or {}
        self._busy = False

    def execute(self, db: Database, sink: Callable[[ActionRequest], None] | None = None,
                max_steps: int = 1_000_000) -> ActionLog:
        if self._busy:
            raise RuntimeError("only one execution may be in flight")
        self._busy = True
        try:
            return self._run(db, sink, max_steps)
        finally:
            self._busy = False

    # -- helpers

    def _pop(self, st: VmState) -> int:
        if not st.stack:
            raise VmError(st.pc, "stack underflow")
        return st.stack.pop()

    def _frame(self, st: VmState) -> list[_Register]:
        if not st.frames:
            raise VmError(st.pc, "atom access outside a guard")
        return st.frames[-1]

    def _register(self, st: VmState, k: int) -> _Register:
        frame = self._frame(st)
        if not 1 <= k <= len(frame):
            raise VmError(st.pc, f"atom index {k} out of range")
        return frame[k - 1]

    def _resolve(self, st: VmState, db: Database, opn1: int, opn2: int) -> list[EntityRef]:
        kind, mode = split_operand(opn1)
        try:
            if mode == M_LIT:
                e = EntityRef(kind, opn2)
                if not db.topology.exists(e):
                    raise VmError(st.pc, f"unresolved entity {e}")
                return [e]
            if mode == M_AT:
                return list(self._register(st, opn2).match)
            if mode == M_TILDE:
                reg = self._register(st, opn2)
                return [m for m in reg.members if m not in reg.match]
            if mode == M_DOLLAR:
                return list(self._register(st, opn2).entity)
            if mode == M_MATCH:
                seen: list[EntityRef] = []
                for reg in self._frame(st):
                    if reg.satisfied:
                        seen.extend(m for m in reg.match if m not in seen)
                return sorted(seen)
            if mode == M_STAR:
                if kind == NODE:
                    return [EntityRef(NODE, n) for n in range(db.topology.nprocs)]
                pool = db.topology.tasks if kind == TASK else db.topology.groups
                return [EntityRef(kind, u) for u in sorted(pool)]
        except ModelError as exc:
            raise VmError(st.pc, str(exc)) from None
        raise VmError(st.pc, f"bad addressing mode {mode}")

    def _store(self, st: VmState, db: Database, t: Triplet, op: str,
               status_other: int | None = None) -> tuple[int, _Register]:
        ents = self._resolve(st, db, t.opn1, t.opn2)
        members: list[EntityRef] = []
        for e in ents:
            members.extend(m for m in db.topology.members(e) if m not in members)
        value, hits = 0, []
        try:
            for e in ents:
                other = EntityRef(TASK, status_other) if status_other is not None else None
                v, m = db.query_atom(Atom(op, e, other))
                if op in ("ERRN",):
                    value += v
                elif op in ("PHASE", "ERRT"):
                    value = v
                else:
                    value = value or v
                hits.extend(m)
        except ModelError as exc:
            raise VmError(st.pc, str(exc)) from None
        kind_of = {e.id: e.kind for e in members}
        match = [EntityRef(kind_of.get(h, TASK), h) for h in dict.fromkeys(hits)]
        reg = _Register(ents, members, match, satisfied=bool(value))
        self._frame(st).append(reg)
        return value, reg

    def _emit(self, log: ActionLog, sink, req: ActionRequest):
        log.actions.append(req)
        if sink is not None:
            sink(req)

    # -- main loop

    def _run(self, db: Database, sink, max_steps: int) -> ActionLog:
        prog = self.program.triplets
        log = ActionLog()
        st = VmState()
        trace = log.trace
        steps = 0
        while True:
            if not 0 <= st.pc < len(prog):
                raise VmError(st.pc, "program counter out of range")
            steps += 1
            if steps > max_steps:
                raise VmError(st.pc, "step limit exceeded")
            t = prog[st.pc]
            pc = st.pc
            op = t.opcode
            nxt = pc + 1

            def say(text):
                trace.append(f"{pc}\t{text}")

            if op == HALT and t.opn1 == -1 and t.opn2 == -1:
                say("HALT.")
                if st.nest != 0:
                    raise VmError(pc, f"halt with {st.nest} open sections")
                return log
            if op == SET_ROLE:
                say(f"SET-ROLE: node {t.opn1} is {ROLE_NAMES.get(t.opn2, t.opn2)}.")
            elif op == IF:
                if t.opn1 == IF_ELIF:
                    self._frame(st).clear()
                    say("ELIF statement.")
                else:
                    st.nest += 1
                    st.frames.append([])
                    say("IF statement.")
            elif op == FI:
                if st.nest == 0:
                    raise VmError(pc, "FI without IF")
                if st.stack:
                    raise VmError(pc, "stack not empty at FI")
                st.nest -= 1
                say("FI statement.")
            elif op == OANEW:
                if not st.frames:
                    raise VmError(pc, "OANEW without an open frame")
                st.frames.pop()
                say("OA-RENEW.")
            elif op == STORE_PHASE:
                v, reg = self._store(st, db, t, "PHASE")
                st.stack.append(v)
                say(f"STORE-PHASE: stored phase of task {t.opn2 if split_operand(t.opn1)[1] == M_LIT else _targets_text(reg.entity)}, i.e., {v}.")
            elif op == STORE_ERRN:
                v, _ = self._store(st, db, t, "ERRN")
                st.stack.append(v)
                say(f"STORE-ERRN: {v} errors.")
            elif op == STORE_ERRT:
                v, _ = self._store(st, db, t, "ERRT")
                st.stack.append(v)
                say(f"STORE-ERRT: last error type {v}.")
            elif op == STORE_STATUS:
                code = self._pop(st)
                other = None
                if code == DEADLOCKED_CODE:
                    other = self._pop(st)
                    name = "DEADLOCKED"
                elif 0 <= code < len(STATUSES):
                    name = STATUSES[code]
                else:
                    raise VmError(pc, f"bad status code {code}")
                v, reg = self._store(st, db, t, name, other)
                st.stack.append(int(bool(v)))
                say(f"STORE-STATUS: {name} {_targets_text(reg.entity)}, i.e., {int(bool(v))}.")
            elif op == COMPARE:
                v = self._pop(st)
                fn = _CMP_FN.get(t.opn1)
                if fn is None:
                    raise VmError(pc, f"bad comparison code {t.opn1}")
                r = int(fn(v, t.opn2))
                frame = st.frames[-1] if st.frames else []
                if frame:
                    reg = frame[-1]
                    reg.satisfied = bool(r)
                    if not r:
                        reg.match = []
                st.stack.append(r)
                say(f"COMPARING({t.opn2} vs. {v}): Storing {r}.")
            elif op in (AND, OR):
                b = self._pop(st)
                a = self._pop(st)
                r = int(bool(a) and bool(b)) if op == AND else int(bool(a) or bool(b))
                st.stack.append(r)
                say(f"{OPNAMES[op]}({a}, {b}): Storing {r}.")
            elif op == NOT:
                a = self._pop(st)
                st.stack.append(int(not a))
                say(f"NOT({a}): Storing {int(not a)}.")
            elif op == FALSE:
                v = self._pop(st)
                if not 0 <= t.opn1 < len(prog):
                    raise VmError(pc, f"bad jump target {t.opn1}")
                if v == 0:
                    nxt = t.opn1
                    say(f"Conditional GOTO, fulfilled, {nxt}.")
                else:
                    say(f"Conditional GOTO, unfulfilled, {nxt}.")
            elif op == PUSH:
                if t.opn2 == PUSH_FAULTY:
                    v = -1
                    for reg in (st.frames[-1] if st.frames else []):
                        hit = next((m.id for m in reg.match if reg.satisfied
                                    and db.faulty(m)), None)
                        if hit is not None:
                            v = hit
                            break
                else:
                    v = t.opn1
                st.stack.append(v)
                say(f"PUSH({v}).")
            elif op == SEND:
                v = self._pop(st)
                targets = self._resolve(st, db, t.opn1, t.opn2)
                if v < 0 or not targets:
                    say("SEND skipped, nothing to send.")
                else:
                    self._emit(log, sink, ActionRequest("send", tuple(targets), v, pc=pc))
                    say(f"SEND MSG {v} to {_targets_text(targets)}.")
            elif op in _VERBS:
                verb = _VERBS[op]
                targets = self._resolve(st, db, t.opn1, t.opn2)
                if verb == "stop" and split_operand(t.opn1)[1] == M_STAR:
                    raise VmError(pc, "wildcard stop")
                if targets:
                    self._emit(log, sink, ActionRequest(verb, tuple(targets), pc=pc))
                say(f"{_VERB_TRACE[verb]} {_targets_text(targets)}.")
            elif op == WARN:
                sid = self._pop(st)
                skind = self._pop(st)
                code = self._pop(st)
                args = self._pop_args(st)
                targets = self._resolve(st, db, t.opn1, t.opn2)
                subject = EntityRef(skind, sid) if sid >= 0 and skind >= 0 else None
                if targets:
                    self._emit(log, sink, ActionRequest(
                        "warn", tuple(targets), None if code < 0 else code, args,
                        subject, pc=pc))
                say(f"WARN {_targets_text(targets)}.")
            elif op == REMOVE:
                sel = self._pop(st)
                if sel not in (REMOVE_PHASE, REMOVE_ANY):
                    raise VmError(pc, f"bad remove selector {sel}")
                targets = self._resolve(st, db, t.opn1, t.opn2)
                if targets:
                    self._emit(log, sink, ActionRequest("remove", tuple(targets), sel, pc=pc))
                say(f"REMOVE {'PHASE' if sel == REMOVE_PHASE else 'ANY'} of {_targets_text(targets)}.")
            elif op == CALL:
                args = self._pop_args(st)
                self._emit(log, sink, ActionRequest("call", (), t.opn1, args, pc=pc))
                fn = self.callbacks.get(t.opn1)
                if fn is not None:
                    fn(*args)
                say(f"CALL {t.opn1}{tuple(args)}.")
            elif op == PAUSE:
                self._emit(log, sink, ActionRequest("pause", (), t.opn1, pc=pc))
                say(f"PAUSE {t.opn1}.")
            else:
                raise VmError(pc, f"unknown opcode {op}")
            st.pc = nxt

    def _pop_args(self, st: VmState) -> tuple[int, ...]:
        n = self._pop(st)
        if n < 0:
            raise VmError(st.pc, "negative argument count")
        args = [self._pop(st) for _ in range(n)]
        return tuple(reversed(args))


def execute(program: RcodeProgram, db: Database,
            sink: Callable[[ActionRequest], None] | None = None) -> ActionLog:
    return Interpreter(program).execute(db, sink)
