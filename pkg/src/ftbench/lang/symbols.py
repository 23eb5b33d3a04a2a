"""Include files, brace substitution, interval expansion and the
configuration tables derived from a parsed script."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from typing import Callable

from ..model import GroupDescriptor, TaskDescriptor, Topology
from . import nodes as n
from .diag import Diagnostics

_DEFINE = re.compile(r"^\s*#\s*define\s+([A-Za-z_][A-Za-z0-9_]*)\s+(-?\d+)\b")


@dataclass(frozen=True)
class WatchdogConfig:
    watchdog_id: int
    watched: int | None
    period: int                      # ticks
    on_error: tuple                  # ("warn_task", uid) | ("warn_backbone",) | ("reboot",) | ("restart",)
    alpha: tuple[float, float] | None
    line: int = 0


@dataclass(frozen=True)
class VersionConfig:
    rank: int
    task: int
    spare: bool
    timeout: int | None              # ticks


@dataclass(frozen=True)
class NVersionConfig:
    nv_id: int
    versions: tuple[VersionConfig, ...]
    algorithm: str
    metric: str
    on_success: int | None
    on_error: int | None
    line: int = 0

    @property
    def members(self) -> list[int]:
        return [v.task for v in sorted(self.versions, key=lambda v: v.rank) if not v.spare]

    @property
    def spares(self) -> list[int]:
        return [v.task for v in sorted(self.versions, key=lambda v: v.rank) if v.spare]


@dataclass(frozen=True)
class InjectionSpec:
    fault: str                       # BFAULT or MFAULT
    what: str                        # NODE or COMPONENT (a task unique-id)
    target: int
    after: int
    line: int = 0


@dataclass
class SymbolTable:
    constants: dict[str, int] = field(default_factory=dict)
    tasks: list[TaskDescriptor] = field(default_factory=list)
    groups: list[GroupDescriptor] = field(default_factory=list)
    nprocs: int = 0
    nprocs_declared: bool = False
    roles: list[tuple[int, str]] = field(default_factory=list)
    backbone_timeouts: dict[str, int] = field(default_factory=dict)
    numtasks: dict[int, int] = field(default_factory=dict)
    aliases: list[tuple[int, int, int]] = field(default_factory=list)
    alpha_params: dict[int, tuple[float, float]] = field(default_factory=dict)
    watchdogs: list[WatchdogConfig] = field(default_factory=list)
    nversions: list[NVersionConfig] = field(default_factory=list)
    injections: list[InjectionSpec] = field(default_factory=list)
    sections: list[n.Section] = field(default_factory=list)
    transcript: list[str] = field(default_factory=list)
    # declaration line of ("task"|"group"|"role"|"alpha", id)
    lines: dict[tuple[str, int], int] = field(default_factory=dict)

    def task_ids(self) -> set[int]:
        return {t.unique_id for t in self.tasks}

    def group_ids(self) -> set[int]:
        return {g.unique_id for g in self.groups}

    def topology(self) -> Topology:
        topo = Topology(self.nprocs)
        for t in self.tasks:
            topo.add_task(t)
        for g in self.groups:
            topo.add_group(g)
        return topo


class _Unresolved(Exception):
    pass


class _Resolver:
    def __init__(self, constants: dict[str, int], diags: Diagnostics):
        self.constants = constants
        self.diags = diags
        self.missing: set[tuple[str, int]] = set()

    def value(self, v):
        if isinstance(v, n.Ref):
            if v.name in self.constants:
                return self.constants[v.name]
            if (v.name, v.line) not in self.missing:
                self.missing.add((v.name, v.line))
                self.diags.error(v.line, f"unresolved symbol {{{v.name}}}", "symbol")
            raise _Unresolved(v.name)
        return v

    def tree(self, obj):
        """Copy of ``obj`` with every Ref replaced by its integer."""
        if isinstance(obj, n.Ref):
            return self.value(obj)
        if isinstance(obj, list):
            return [self.tree(x) for x in obj]
        if isinstance(obj, tuple):
            return tuple(self.tree(x) for x in obj)
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            changes = {f.name: self.tree(getattr(obj, f.name))
                       for f in dataclasses.fields(obj)}
            return dataclasses.replace(obj, **changes)
        return obj


def read_defines(text: str) -> dict[str, int]:
    """``#define NAME <integer>`` pairs; every other line is ignored."""
    out = {}
    for line in text.splitlines():
        m = _DEFINE.match(line)
        if m:
            out[m.group(1)] = int(m.group(2))
    return out


def _span_values(span: n.Span) -> list[int] | None:
    if not span.interval:
        return [span.lo]
    if span.lo > span.hi:
        return None
    return list(range(span.lo, span.hi + 1))


def resolve_symbols(ast: n.Ast, include_loader: Callable[[str], str] | None = None,
                    ) -> tuple[SymbolTable, Diagnostics]:
    """Build the symbol table.  ``include_loader`` maps an include name
    to its text and raises ``OSError`` or ``KeyError`` when it is absent."""
    diags = Diagnostics()
    st = SymbolTable()
    for item in ast.config_items:
        if not isinstance(item, n.Include):
            continue
        try:
            if include_loader is None:
                raise KeyError(item.path)
            text = include_loader(item.path)
        except (OSError, KeyError):
            diags.error(item.line, f"cannot open include file '{item.path}'", "symbol")
            continue
        defs = read_defines(text)
        st.constants.update(defs)
        st.transcript.append(
            f"[ Including file '{item.path}' ...{len(defs)} associations stored. ]")

    res = _Resolver(st.constants, diags)
    seen = set()
    for disp, name, _line in ast.refs:
        if disp in seen or name not in st.constants:
            continue
        seen.add(disp)
        prefix = disp[:disp.index("{")]
        st.transcript.append(f"substituting {disp} with {prefix}{st.constants[name]}")

    items = []
    for item in ast.config_items:
        try:
            items.append(res.tree(item))
        except _Unresolved:
            pass
    for sec in ast.sections:
        try:
            st.sections.append(res.tree(sec))
        except _Unresolved:
            pass

    uids: dict[int, int] = {}
    slots: set[tuple[int, int]] = set()

    def claim(uid: int, line: int) -> bool:
        if uid in uids:
            diags.error(line, f"duplicate unique-id {uid} (first declared on line {uids[uid]})",
                        "symbol")
            return False
        uids[uid] = line
        return True

    nodes_seen: list[int] = []
    for item in items:
        if isinstance(item, n.NProcs):
            st.nprocs = item.value
            st.nprocs_declared = True
        elif isinstance(item, n.RoleDef):
            if item.interval is not None:
                a, b = item.interval
                if a > b:
                    diags.error(item.line, f"empty interval {a}-{b}", "symbol")
                    continue
                ids = list(range(a, b + 1))
            else:
                ids = item.nodes
            for node in ids:
                st.roles.append((node, item.role))
                st.lines.setdefault(("role", node), item.line)
                nodes_seen.append(node)
        elif isinstance(item, n.TimeoutSet):
            st.backbone_timeouts[item.name] = item.value
        elif isinstance(item, n.NumTasks):
            st.numtasks[item.node] = item.count
        elif isinstance(item, n.TaskDecl):
            ids = _span_values(item.ids)
            locs = _span_values(item.local_ids)
            if ids is None or locs is None:
                diags.error(item.line, "interval bounds out of order", "symbol")
                continue
            if len(ids) != len(locs) or item.ids.interval != item.local_ids.interval:
                diags.error(item.line, f"interval lengths differ ({len(ids)} vs {len(locs)})",
                            "symbol")
                continue
            for uid, loc in zip(ids, locs):
                if (item.node, loc) in slots:
                    diags.error(item.line, f"task-id {loc} reused on node {item.node}", "symbol")
                    continue
                if not claim(uid, item.line):
                    continue
                slots.add((item.node, loc))
                name = item.name if item.name and len(ids) == 1 else (
                    f"{item.name}{uid}" if item.name else f"T{uid}")
                st.tasks.append(TaskDescriptor(uid, name, item.node, loc))
                st.lines[("task", uid)] = item.line
                nodes_seen.append(item.node)
        elif isinstance(item, n.AliasDecl):
            a, b, c = (_span_values(s) for s in (item.ids, item.mbox, item.alias))
            if a is None or b is None or c is None or not len(a) == len(b) == len(c):
                diags.error(item.line, "alias intervals do not match", "symbol")
                continue
            st.aliases.extend(zip(a, b, c))
        elif isinstance(item, n.LogicalDecl):
            if not claim(item.id, item.line):
                continue
            st.lines[("group", item.id)] = item.line
            st.groups.append(GroupDescriptor(item.id, item.name or f"L{item.id}",
                                             tuple(item.members)))
        elif isinstance(item, n.AlphaDecl):
            if not 0.0 <= item.factor <= 1.0 or not item.threshold > 0:
                diags.error(item.line, "alpha-count needs threshold > 0 and factor in [0, 1]",
                            "symbol")
                continue
            st.alpha_params[item.task] = (item.threshold, item.factor)
            st.lines[("alpha", item.task)] = item.line
        elif isinstance(item, n.WatchdogDecl):
            period = item.period * item.unit if item.period is not None else 0
            st.watchdogs.append(WatchdogConfig(item.id, item.watched, period,
                                               item.on_error, item.alpha, item.line))
        elif isinstance(item, n.NVersionDecl):
            versions = tuple(VersionConfig(v.rank, v.task, v.spare,
                                           None if v.timeout is None else v.timeout * v.unit)
                             for v in item.versions)
            st.nversions.append(NVersionConfig(item.id, versions, item.algorithm.lower(),
                                               item.metric, item.on_success, item.on_error,
                                               item.line))
        elif isinstance(item, n.InjectDecl):
            st.injections.append(InjectionSpec(item.fault, item.what, item.target,
                                               item.after, item.line))
    if not st.nprocs_declared:
        st.nprocs = max(nodes_seen) + 1 if nodes_seen else 0
    return st, diags
