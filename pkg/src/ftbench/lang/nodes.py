"""Syntax tree produced by the parser.

Numbers in the tree are either ``int`` or ``Ref`` (a ``{NAME}`` brace
reference, resolved later against the include files).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union


@dataclass(frozen=True)
class Ref:
    name: str
    line: int


Num = Union[int, Ref]


@dataclass(frozen=True)
class Span:
    """A single value (``lo is hi``) or a bracketed interval ``[lo, hi]``."""
    lo: Num
    hi: Num
    interval: bool = False


@dataclass(frozen=True)
class EntityExpr:
    kind: str            # "task", "group" or "node"
    mode: str            # lit, at, tilde, dollar, match, star
    value: Num | None    # id for lit, atom index for at/tilde/dollar
    line: int
    prefix: str = "T"    # the kind word as written, for transcripts


# -- configuration items

@dataclass
class Include:
    path: str
    line: int


@dataclass
class NProcs:
    value: Num
    line: int


@dataclass
class RoleDef:
    nodes: list[Num]
    interval: tuple[Num, Num] | None
    role: str            # "manager" or "assistant"
    line: int


@dataclass
class TimeoutSet:
    name: str
    value: Num
    line: int


@dataclass
class NumTasks:
    node: Num
    count: Num
    line: int


@dataclass
class TaskDecl:
    ids: Span
    name: str | None
    node: Num
    local_ids: Span
    line: int


@dataclass
class AliasDecl:
    ids: Span
    mbox: Span
    alias: Span
    line: int


@dataclass
class LogicalDecl:
    id: Num
    name: str | None
    members: list[Num]
    line: int


@dataclass
class AlphaDecl:
    task: Num
    threshold: float
    factor: float
    line: int


@dataclass
class WatchdogDecl:
    id: Num
    watched: Num | None
    period: Num | None
    unit: int            # ticks per unit of ``period``
    on_error: tuple      # ("warn_task", Num) | ("warn_backbone",) | ("reboot",) | ("restart",)
    alpha: tuple[float, float] | None
    line: int


@dataclass
class VersionDecl:
    rank: Num
    task: Num
    spare: bool
    timeout: Num | None
    unit: int
    line: int


@dataclass
class NVersionDecl:
    id: Num
    versions: list[VersionDecl]
    algorithm: str
    metric: str
    on_success: Num | None
    on_error: Num | None
    on_error_extra: Num | None
    line: int


@dataclass
class InjectDecl:
    fault: str           # BFAULT or MFAULT
    what: str            # NODE or COMPONENT
    target: Num
    after: Num
    line: int


# -- guards

@dataclass
class AtomExpr:
    op: str              # a status word, PHASE, ERRN, ERRT or DEADLOCKED
    entity: EntityExpr
    cmp: str | None = None
    literal: Num | None = None
    other: EntityExpr | None = None
    line: int = 0


@dataclass
class NotExpr:
    arg: object


@dataclass
class BinExpr:
    op: str              # AND or OR
    left: object
    right: object


# -- actions

@dataclass
class Action:
    verb: str            # stop start restart isolate enable reboot send send_faulty
    #                      warn remove call pause
    line: int
    entity: EntityExpr | None = None
    value: Num | None = None
    selector: str | None = None
    args: list[Num] = field(default_factory=list)
    err_code: Num | None = None
    subject: EntityExpr | None = None


@dataclass
class Branch:
    guard: object
    actions: list
    line: int


@dataclass
class Section:
    branches: list[Branch]
    else_actions: list | None
    line: int
    end_line: int = 0


@dataclass
class Ast:
    config_items: list = field(default_factory=list)
    sections: list[Section] = field(default_factory=list)
    # every brace reference in source order: (display text, name, line)
    refs: list[tuple[str, str, int]] = field(default_factory=list)
    line_count: int = 0
