"""Static checks run after symbol resolution."""

from __future__ import annotations

from . import nodes as n
from .diag import Diagnostics
from .symbols import SymbolTable

SEM = "semantical"


def count_atoms(expr) -> int:
    if isinstance(expr, n.AtomExpr):
        return 1
    if isinstance(expr, n.NotExpr):
        return count_atoms(expr.arg)
    if isinstance(expr, n.BinExpr):
        return count_atoms(expr.left) + count_atoms(expr.right)
    raise TypeError(f"not a guard expression: {expr!r}")


def atoms_of(expr) -> list[n.AtomExpr]:
    if isinstance(expr, n.AtomExpr):
        return [expr]
    if isinstance(expr, n.NotExpr):
        return atoms_of(expr.arg)
    return atoms_of(expr.left) + atoms_of(expr.right)


class _Checker:
    def __init__(self, st: SymbolTable):
        self.st = st
        self.diags = Diagnostics()
        self.tasks = st.task_ids()
        self.groups = st.group_ids()
        self.used_groups: set[int] = set()

    def err(self, line, msg):
        self.diags.error(line, msg, SEM)

    def literal(self, e: n.EntityExpr) -> None:
        if e.kind == "task" and e.value not in self.tasks:
            self.err(e.line, f"undeclared task {e.value}")
        elif e.kind == "group":
            if e.value not in self.groups:
                self.err(e.line, f"undeclared logical {e.value}")
            self.used_groups.add(e.value)
        elif e.kind == "node" and not 0 <= e.value < self.st.nprocs:
            self.err(e.line, f"node {e.value} outside NPROCS ({self.st.nprocs})")

    def entity(self, e: n.EntityExpr, natoms: int) -> None:
        if e.mode == "lit":
            self.literal(e)
        elif e.mode in ("at", "tilde", "dollar"):
            if not 1 <= e.value <= natoms:
                self.err(e.line, f"atom index {e.value} out of range "
                                 f"(guard has {natoms} atoms)")

    def guard(self, expr) -> int:
        for k, atom in enumerate(atoms_of(expr), start=1):
            # a guard atom may only look back at atoms already evaluated
            self.entity(atom.entity, k - 1)
            if atom.op == "PHASE" and atom.entity.kind != "task":
                self.err(atom.line, "Can only use PHASE with tasks")
            if atom.op == "DEADLOCKED":
                for e in (atom.entity, atom.other):
                    if e.kind != "task":
                        self.err(atom.line, "DEADLOCKED takes two tasks")
                self.entity(atom.other, k - 1)
        return count_atoms(expr)

    def actions(self, acts, natoms: int) -> None:
        for a in acts:
            if isinstance(a, n.Section):
                self.section(a)
                continue
            if a.entity is not None:
                self.entity(a.entity, natoms)
                if a.verb == "stop" and a.entity.mode == "star":
                    self.err(a.line, "STOP with a wildcard is not allowed")
                if a.verb in ("send", "send_faulty") and a.entity.kind == "node":
                    self.err(a.line, "SEND needs a task or a logical")
            if a.subject is not None:
                self.entity(a.subject, natoms)
            if a.verb == "pause" and a.value < 0:
                self.err(a.line, "PAUSE needs a non-negative duration")

    def section(self, sec: n.Section) -> None:
        natoms = 0
        for br in sec.branches:
            natoms = self.guard(br.guard)
            self.actions(br.actions, natoms)
        if sec.else_actions is not None:
            self.actions(sec.else_actions, natoms)

    def config(self) -> None:
        st = self.st
        for node, _role in st.roles:
            if not 0 <= node < st.nprocs:
                self.err(st.lines.get(("role", node), 0), f"role given to node {node} outside NPROCS ({st.nprocs})")
        for t in st.tasks:
            if not 0 <= t.node < st.nprocs:
                self.err(st.lines.get(("task", t.unique_id), 0), f"task {t.unique_id} placed on node {t.node} outside NPROCS "
                            f"({st.nprocs})")
        for g in st.groups:
            for m in g.members:
                if m not in self.tasks:
                    self.err(st.lines.get(("group", g.unique_id), 0), f"logical {g.unique_id} member {m} is not a declared task")
            if len(set(g.members)) != len(g.members):
                self.err(st.lines.get(("group", g.unique_id), 0), f"logical {g.unique_id} lists a member twice")
        for uid in st.alpha_params:
            if uid not in self.tasks:
                self.err(st.lines.get(("alpha", uid), 0), f"alpha-count for undeclared task {uid}")
        for w in st.watchdogs:
            if w.watchdog_id not in self.tasks:
                self.err(w.line, f"watchdog {w.watchdog_id} is not a declared task")
            if w.watched is not None and w.watched not in self.tasks:
                self.err(w.line, f"watchdog {w.watchdog_id} watches undeclared task {w.watched}")
            if w.period <= 0:
                self.err(w.line, f"watchdog {w.watchdog_id} needs a positive heartbeat period")
            if w.on_error[0] == "warn_task" and w.on_error[1] not in self.tasks:
                self.err(w.line, f"watchdog {w.watchdog_id} warns undeclared task "
                                 f"{w.on_error[1]}")
        for nv in st.nversions:
            ranks = [v.rank for v in nv.versions]
            if len(set(ranks)) != len(ranks):
                self.err(nv.line, f"n-version {nv.nv_id} repeats a version rank")
            tasks = [v.task for v in nv.versions]
            if len(set(tasks)) != len(tasks):
                self.err(nv.line, f"n-version {nv.nv_id} lists a task twice")
            for v in nv.versions:
                if v.task not in self.tasks:
                    self.err(nv.line, f"n-version {nv.nv_id} version {v.rank} is undeclared "
                                      f"task {v.task}")
            if len(nv.members) < 2:
                self.err(nv.line, f"n-version {nv.nv_id} needs at least two active versions")
            for label, uid in (("success", nv.on_success), ("error", nv.on_error)):
                if uid is not None and uid not in self.tasks:
                    self.diags.warn(nv.line, f"n-version {nv.nv_id} on-{label} target {uid} "
                                             f"is not a declared task")
        for inj in st.injections:
            if inj.what == "NODE" and not 0 <= inj.target < st.nprocs:
                self.err(inj.line, f"injection on node {inj.target} outside NPROCS")
            if inj.what == "COMPONENT" and inj.target not in self.tasks:
                self.err(inj.line, f"injection on undeclared component {inj.target}")
            if inj.after < 0:
                self.err(inj.line, "injection time must be non-negative")


def check_semantics(symtab: SymbolTable) -> Diagnostics:
    c = _Checker(symtab)
    c.config()
    for sec in symtab.sections:
        c.section(sec)
    used = c.used_groups | {nv.nv_id for nv in symtab.nversions}
    for g in symtab.groups:
        if g.unique_id not in used:
            c.diags.warn(symtab.lines.get(("group", g.unique_id), 0),
                         f"logical {g.unique_id} is never used")
    return c.diags
