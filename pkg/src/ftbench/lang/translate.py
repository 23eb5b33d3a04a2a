"""Translation of checked sections into r-code.

Layout of one section with branches g1, g2 and an else part::

    IF                      open section, new atom frame
    <g1>  FALSE -> L2
    <actions 1>  PUSH 0  FALSE -> FI
    L2: IF elif             re-arm the frame for the next guard
    <g2>  FALSE -> L3
    <actions 2>  PUSH 0  FALSE -> FI
    L3: <else actions>
    FI
    ANEW_OA_OBJECTS depth

Jump targets are absolute triplet indices.  A failed last guard without
an else part jumps straight to the FI so the nesting count unwinds there.
"""

from __future__ import annotations

from .. import rcode as rc
from ..model import STATUSES
from . import nodes as n
from .semantics import count_atoms
from .symbols import SymbolTable

KIND_CODE = {"node": 0, "task": 1, "group": 2}
MODE_CODE = {"lit": rc.M_LIT, "at": rc.M_AT, "tilde": rc.M_TILDE,
             "dollar": rc.M_DOLLAR, "match": rc.M_MATCH, "star": rc.M_STAR}
_VERB_OP = {"stop": rc.STOP, "start": rc.START, "restart": rc.RESTART,
            "isolate": rc.ISOLATE, "enable": rc.ENABLE, "reboot": rc.REBOOT}
_STORE_OP = {"PHASE": rc.STORE_PHASE, "ERRN": rc.STORE_ERRN, "ERRT": rc.STORE_ERRT}


class TranslateError(RuntimeError):
    """Internal inconsistency; the checker should have caught it."""


def operand(e: n.EntityExpr) -> tuple[int, int]:
    o1 = rc.entity_operand(KIND_CODE[e.kind], MODE_CODE[e.mode])
    return o1, (-1 if e.value is None else int(e.value))


class _Emitter:
    def __init__(self):
        self.code: list[list[int]] = []

    def emit(self, op: int, a: int = -1, b: int = -1) -> int:
        self.code.append([op, a, b])
        return len(self.code) - 1

    def patch(self, at: int, target: int) -> None:
        self.code[at][1] = target

    @property
    def here(self) -> int:
        return len(self.code)

    def guard(self, expr) -> None:
        if isinstance(expr, n.BinExpr):
            self.guard(expr.left)
            self.guard(expr.right)
            self.emit(rc.AND if expr.op == "AND" else rc.OR)
        elif isinstance(expr, n.NotExpr):
            self.guard(expr.arg)
            self.emit(rc.NOT)
        elif isinstance(expr, n.AtomExpr):
            o1, o2 = operand(expr.entity)
            if expr.op in _STORE_OP:
                self.emit(_STORE_OP[expr.op], o1, o2)
                self.emit(rc.COMPARE, rc.CMP_CODES[expr.cmp], int(expr.literal))
            elif expr.op == "DEADLOCKED":
                self.emit(rc.PUSH, int(expr.other.value))
                self.emit(rc.PUSH, rc.DEADLOCKED_CODE)
                self.emit(rc.STORE_STATUS, o1, o2)
            elif expr.op in STATUSES:
                self.emit(rc.PUSH, rc.STATUS_CODES[expr.op])
                self.emit(rc.STORE_STATUS, o1, o2)
            else:
                raise TranslateError(f"unknown atom {expr.op}")
        else:
            raise TranslateError(f"bad guard node {expr!r}")

    def args(self, values) -> None:
        for v in values:
            self.emit(rc.PUSH, int(v))
        self.emit(rc.PUSH, len(values))

    def action(self, a, natoms: int, depth: int) -> None:
        if isinstance(a, n.Section):
            self.section(a, depth + 1)
            return
        ent = a.entity
        if ent is not None and ent.mode in ("at", "tilde", "dollar") \
                and not 1 <= ent.value <= natoms:
            raise TranslateError(f"line {a.line}: atom index {ent.value} out of range")
        if a.verb in _VERB_OP:
            if a.verb == "stop" and ent.mode == "star":
                raise TranslateError(f"line {a.line}: wildcard STOP")
            self.emit(_VERB_OP[a.verb], *operand(ent))
        elif a.verb == "send":
            self.emit(rc.PUSH, int(a.value))
            self.emit(rc.SEND, *operand(ent))
        elif a.verb == "send_faulty":
            self.emit(rc.PUSH, -1, rc.PUSH_FAULTY)
            self.emit(rc.SEND, *operand(ent))
        elif a.verb == "warn":
            self.args(a.args)
            self.emit(rc.PUSH, -1 if a.err_code is None else int(a.err_code))
            if a.subject is not None and a.subject.mode == "lit":
                self.emit(rc.PUSH, KIND_CODE[a.subject.kind])
                self.emit(rc.PUSH, int(a.subject.value))
            else:
                self.emit(rc.PUSH, -1)
                self.emit(rc.PUSH, -1)
            self.emit(rc.WARN, *operand(ent))
        elif a.verb == "remove":
            self.emit(rc.PUSH, rc.REMOVE_PHASE if a.selector == "phase" else rc.REMOVE_ANY)
            self.emit(rc.REMOVE, *operand(ent))
        elif a.verb == "call":
            self.args(a.args)
            self.emit(rc.CALL, int(a.value))
        elif a.verb == "pause":
            self.emit(rc.PAUSE, int(a.value))
        else:
            raise TranslateError(f"unknown action {a.verb}")

    def section(self, sec: n.Section, depth: int) -> None:
        self.emit(rc.IF)
        to_fi: list[int] = []
        pending = None
        natoms = 0
        for k, br in enumerate(sec.branches):
            if k > 0:
                self.patch(pending, self.emit(rc.IF, rc.IF_ELIF))
            natoms = count_atoms(br.guard)
            self.guard(br.guard)
            pending = self.emit(rc.FALSE)
            for a in br.actions:
                self.action(a, natoms, depth)
            last = k == len(sec.branches) - 1
            if not last or sec.else_actions is not None:
                self.emit(rc.PUSH, 0)
                to_fi.append(self.emit(rc.FALSE))
        if sec.else_actions is not None:
            self.patch(pending, self.here)
            pending = None
            for a in sec.else_actions:
                self.action(a, natoms, depth)
        fi = self.emit(rc.FI)
        if pending is not None:
            self.patch(pending, fi)
        for at in to_fi:
            self.patch(at, fi)
        self.emit(rc.OANEW, depth)


def translate(symtab: SymbolTable) -> rc.RcodeProgram:
    """R-code for the role definitions and every section of ``symtab``.

    The caller must have run ``check_semantics`` without errors.
    """
    em = _Emitter()
    for node, role in symtab.roles:
        em.emit(rc.SET_ROLE, node, rc.ROLE_MANAGER if role == "manager" else rc.ROLE_ASSISTANT)
    for sec in symtab.sections:
        em.section(sec, 1)
    em.emit(rc.HALT)
    prog = rc.RcodeProgram([rc.Triplet(*t) for t in em.code])
    try:
        prog.validate()
    except ValueError as exc:
        raise TranslateError(str(exc)) from None
    return prog
