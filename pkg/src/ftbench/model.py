"""Entities, the system-state database, notifications and alpha-count."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

NODE, TASK, GROUP = 0, 1, 2
KIND_NAMES = {NODE: "node", TASK: "task", GROUP: "group"}

# notification condition codes; anything >= ERROR_BASE is an error
PHASE_SET = 1
TASK_STARTED = 2
DEADLOCK = 3
JUDGED_OK = 4
ERROR_BASE = 100
FAULT_DETECTED = 100
DEADLINE_MISSED = 101
VALUE_FAULT = 102
NODE_CRASH = 103
COMPONENT_CRASH = 104

DEFAULT_PHASE = 0
HAS_FAILED = 9999

STATUSES = ("FAULTY", "RUNNING", "REBOOTED", "STARTED", "ISOLATED",
            "RESTARTED", "TRANSIENT", "REINTEGRATED")

OK, TRANSIENT, PERMANENT = "ok", "transient", "permanent_or_intermittent"

DEFAULT_THRESHOLD = 3.0
DEFAULT_FACTOR = 0.4


def is_error(code: int) -> bool:
    return code >= ERROR_BASE


class ModelError(ValueError):
    """Reference to an undeclared entity or a malformed request."""


@dataclass(frozen=True, order=True)
class EntityRef:
    kind: int
    id: int

    def __post_init__(self):
        if self.kind not in KIND_NAMES:
            raise ModelError(f"bad entity kind {self.kind}")
        if self.id < 0:
            raise ModelError("entity ids are non-negative")

    def __str__(self):
        return f"{KIND_NAMES[self.kind]} {self.id}"


def task(i: int) -> EntityRef:
    return EntityRef(TASK, i)


def group(i: int) -> EntityRef:
    return EntityRef(GROUP, i)


def node(i: int) -> EntityRef:
    return EntityRef(NODE, i)


@dataclass(frozen=True)
class TaskDescriptor:
    unique_id: int
    name: str
    node: int
    local_id: int


@dataclass(frozen=True)
class GroupDescriptor:
    unique_id: int
    name: str
    members: tuple[int, ...]


@dataclass
class Topology:
    nprocs: int = 0
    tasks: dict[int, TaskDescriptor] = field(default_factory=dict)
    groups: dict[int, GroupDescriptor] = field(default_factory=dict)

    def add_task(self, t: TaskDescriptor):
        if t.unique_id in self.tasks or t.unique_id in self.groups:
            raise ModelError(f"duplicate unique-id {t.unique_id}")
        for other in self.tasks.values():
            if (other.node, other.local_id) == (t.node, t.local_id):
                raise ModelError(f"task-id {t.local_id} reused on node {t.node}")
        self.tasks[t.unique_id] = t

    def add_group(self, g: GroupDescriptor):
        if g.unique_id in self.tasks or g.unique_id in self.groups:
            raise ModelError(f"duplicate unique-id {g.unique_id}")
        if not g.members:
            raise ModelError(f"group {g.unique_id} has no members")
        if len(set(g.members)) != len(g.members):
            raise ModelError(f"group {g.unique_id} lists a member twice")
        for m in g.members:
            if m not in self.tasks:
                raise ModelError(f"group {g.unique_id} member {m} is not a declared task")
        self.groups[g.unique_id] = g

    def exists(self, e: EntityRef) -> bool:
        if e.kind == NODE:
            return e.id < self.nprocs
        if e.kind == TASK:
            return e.id in self.tasks
        return e.id in self.groups

    def resolve(self, unique_id: int) -> EntityRef:
        if unique_id in self.tasks:
            return task(unique_id)
        if unique_id in self.groups:
            return group(unique_id)
        raise ModelError(f"unknown unique-id {unique_id}")

    def members(self, e: EntityRef) -> list[EntityRef]:
        if e.kind == GROUP:
            return [task(m) for m in self.groups[e.id].members]
        return [e]

    def tasks_on(self, node_id: int) -> list[int]:
        return sorted(t.unique_id for t in self.tasks.values() if t.node == node_id)


@dataclass(frozen=True)
class Notification:
    condition: int
    source_type: int
    subject: int
    args: tuple[int, ...] = ()
    label: int | None = None
    sim_time: int = 0

    @property
    def entity(self) -> EntityRef:
        return EntityRef(self.source_type, self.subject)


@dataclass(frozen=True)
class AlphaCounter:
    factor: float = DEFAULT_FACTOR
    threshold: float = DEFAULT_THRESHOLD
    value: float = 0.0
    last_label: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.factor <= 1.0:
            raise ModelError("alpha factor must lie in [0, 1]")
        if not self.threshold > 0:
            raise ModelError("alpha threshold must be positive")

    @property
    def assessment(self) -> str:
        if self.value >= self.threshold:
            return PERMANENT
        if self.value > 0:
            return TRANSIENT
        return OK


def alpha_update(counter: AlphaCounter, judgment: int, label: int) -> tuple[AlphaCounter, str]:
    """Apply one detector judgment (0 = no error, 1 = error).

    A label that skips ahead stands for the judgments the detector did not
    report, all of which were successes.
    """
    if judgment not in (0, 1):
        raise ModelError("judgment must be 0 or 1")
    value = counter.value
    if counter.last_label is not None:
        if label <= counter.last_label:
            raise ModelError(f"label {label} not after {counter.last_label}")
        value *= counter.factor ** (label - counter.last_label - 1)
    value = value + 1.0 if judgment else value * counter.factor
    out = replace(counter, value=value, last_label=label)
    return out, out.assessment


@dataclass
class EntityState:
    error_list: list[Notification] = field(default_factory=list)
    phase: int = DEFAULT_PHASE
    started: bool = False
    restart_count: int = 0
    isolated: bool = False
    reintegrated: bool = False
    reboot_count: int = 0
    running: bool = True
    alpha: AlphaCounter | None = None
    deadlock_partner: int | None = None
    last_error_seq: int = 0


@dataclass(frozen=True)
class Atom:
    """A guard primitive.  ``op`` is a status keyword or one of
    ERRN, ERRT, PHASE, DEADLOCKED."""
    op: str
    entity: EntityRef
    other: EntityRef | None = None


class Database:
    def __init__(self, topology: Topology,
                 alpha_params: dict[int, tuple[float, float]] | None = None):
        self.topology = topology
        self.log: list[Notification] = []
        self.states: dict[EntityRef, EntityState] = {}
        alpha_params = alpha_params or {}
        for n in range(topology.nprocs):
            self.states[node(n)] = EntityState()
        for uid in topology.tasks:
            th, k = alpha_params.get(uid, (DEFAULT_THRESHOLD, DEFAULT_FACTOR))
            self.states[task(uid)] = EntityState(alpha=AlphaCounter(k, th), running=False)
        for uid in topology.groups:
            self.states[group(uid)] = EntityState()

    def snapshot(self) -> "Database":
        return copy.deepcopy(self)

    def state(self, e: EntityRef) -> EntityState:
        try:
            return self.states[e]
        except KeyError:
            raise ModelError(f"undeclared {e}") from None

    def raise_event(self, n: Notification) -> bool:
        """Record ``n``; return True when it calls for recovery."""
        e = n.entity
        if not self.topology.exists(e):
            raise ModelError(f"notification about undeclared {e}")
        st = self.states[e]
        if is_error(n.condition):
            if st.alpha is not None:
                label = n.label if n.label is not None else _next_label(st.alpha)
                st.alpha, _ = alpha_update(st.alpha, 1, label)
            self.log.append(n)
            st.error_list.append(n)
            st.last_error_seq = len(self.log)
            st.running = False
            return True
        if n.condition == JUDGED_OK and st.alpha is not None:
            label = n.label if n.label is not None else _next_label(st.alpha)
            st.alpha, _ = alpha_update(st.alpha, 0, label)
        elif n.condition == PHASE_SET:
            if e.kind != TASK:
                raise ModelError("phase reports come from tasks")
            if not n.args:
                raise ModelError("phase report without a value")
            st.phase = int(n.args[0])
        elif n.condition == TASK_STARTED:
            st.started = True
            st.running = True
        elif n.condition == DEADLOCK:
            st.deadlock_partner = int(n.args[0]) if n.args else None
        self.log.append(n)
        return False

    def _status(self, e: EntityRef, status: str) -> bool:
        st = self.states[e]
        if status == "FAULTY":
            return bool(st.error_list)
        if status == "RUNNING":
            return st.running and not st.isolated
        if status == "REBOOTED":
            return st.reboot_count >= 1
        if status == "STARTED":
            return st.started
        if status == "ISOLATED":
            return st.isolated
        if status == "RESTARTED":
            return st.restart_count >= 1
        if status == "TRANSIENT":
            return bool(st.error_list) and st.alpha is not None \
                and st.alpha.assessment == TRANSIENT
        if status == "REINTEGRATED":
            return st.reintegrated
        raise ModelError(f"unknown status {status}")

    def query_atom(self, atom: Atom) -> tuple[int, list[int]]:
        """Evaluate ``atom``.  Returns (value, match_set) where match_set
        lists the unique-ids (node ids for nodes) that satisfied it."""
        e = atom.entity
        if not self.topology.exists(e):
            raise ModelError(f"guard refers to undeclared {e}")
        members = self.topology.members(e)
        if atom.op in STATUSES:
            hits = [m.id for m in members if self._status(m, atom.op)]
            return int(bool(hits)), hits
        if atom.op == "ERRN":
            counts = [(m.id, len(self.states[m].error_list)) for m in members]
            return sum(c for _, c in counts), [i for i, c in counts if c]
        if atom.op == "ERRT":
            live = [(self.states[m].last_error_seq, m) for m in members
                    if self.states[m].error_list]
            if not live:
                return 0, []
            _, m = max(live)
            return self.states[m].error_list[-1].condition, [m.id]
        if atom.op == "PHASE":
            if e.kind != TASK:
                raise ModelError("Can only use PHASE with tasks")
            return self.states[e].phase, [e.id]
        if atom.op == "DEADLOCKED":
            a, b = e, atom.other
            if b is None or a.kind != TASK or b.kind != TASK:
                raise ModelError("DEADLOCKED takes two tasks")
            ok = (self.states[a].deadlock_partner == b.id
                  and self.states[b].deadlock_partner == a.id)
            return int(ok), [a.id, b.id] if ok else []
        raise ModelError(f"unknown atom {atom.op}")

    def remove(self, selector: str, e: EntityRef) -> None:
        if selector not in ("phase", "any"):
            raise ModelError(f"bad remove selector {selector!r}")
        if not self.topology.exists(e):
            raise ModelError(f"undeclared {e}")
        targets = self.topology.members(e)
        if e.kind == GROUP:
            targets = [e, *targets]
        for m in targets:
            st = self.states[m]
            st.phase = DEFAULT_PHASE
            if selector == "any":
                st.error_list.clear()

    def errn(self, e: EntityRef) -> int:
        return self.query_atom(Atom("ERRN", e))[0]

    def faulty(self, e: EntityRef) -> bool:
        return bool(self.query_atom(Atom("FAULTY", e))[0])

    def apply_effect(self, verb: str, e: EntityRef) -> None:
        """Book-keeping for a recovery action carried out on ``e``."""
        for m in self.topology.members(e):
            st = self.states[m]
            if verb == "stop":
                st.running = False
            elif verb == "start":
                st.started = True
                st.running = True
            elif verb == "restart":
                st.restart_count += 1
                st.running = True
            elif verb == "isolate":
                st.isolated = True
            elif verb == "enable":
                if st.isolated:
                    st.reintegrated = True
                st.isolated = False
            elif verb == "reboot":
                st.reboot_count += 1
                st.running = True
            else:
                raise ModelError(f"unknown effect {verb!r}")


def _next_label(counter: AlphaCounter) -> int:
    return 0 if counter.last_label is None else counter.last_label + 1


def raise_event(db: Database, n: Notification) -> tuple[Database, bool]:
    return db, db.raise_event(n)


def query_atom(db: Database, atom: Atom) -> tuple[int, list[int]]:
    return db.query_atom(atom)


def db_remove(db: Database, selector: str, e: EntityRef) -> Database:
    db.remove(selector, e)
    return db
