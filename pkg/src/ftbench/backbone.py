"""Per-node backbone: mutual suspicion between manager and assistants,
database replication, local <I'm Alive> guarding, election and the
one-fault-at-a-time recovery loop.

Every component is an actor on the simulator.  Timers carry a generation
token and are ignored once renewed, so a timer never needs cancelling.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, fields
from typing import Callable, Protocol

from . import rcode as rc
from .model import (COMPONENT_CRASH, GROUP, NODE, NODE_CRASH, Database, EntityRef, ModelError,
                    Notification, Topology, is_error)
from .simnet import Simulator

MANAGER = "manager"
ASSISTANT = "assistant"

ALIVE = "alive"
SUSPECTED = "suspected"
REMOVED = "removed"

MIA, TAIA, TEIF, NOTIFY, DB_SYNC, ANNOUNCE, ACTION = (
    "MIA", "TAIA", "TEIF", "NOTIFY", "DB_SYNC", "ANNOUNCE", "ACTION")

# script names for each timeout; the second spelling is the short form
_TIMEOUT_NAMES = {
    "mia_send": ("MIA_SEND_TIMEOUT", "MIA_TIMEOUT"),
    "taia_recv": ("TAIA_RECV_TIMEOUT", "TAIA_TIMEOUT"),
    "mia_recv": ("MIA_RECV_TIMEOUT", "MIA_TIMEOUT_B"),
    "taia_send": ("TAIA_SEND_TIMEOUT", "TAIA_TIMEOUT_B"),
    "teif": ("TEIF_TIMEOUT", "TEIF_TIMEOUT_B"),
    "ia_clear": ("I'M_ALIVE_CLEAR_TIMEOUT", "ALIVE_TIMEOUT"),
    "ia_set": ("I'M_ALIVE_SET_TIMEOUT", "ALIVE_TIMEOUT_B"),
}


@dataclass(frozen=True)
class BackboneTimeouts:
    mia_send: int = 800_000
    taia_recv: int = 1_500_000
    mia_recv: int = 1_500_000
    taia_send: int = 1_000_000
    teif: int = 1_800_000
    ia_clear: int = 900_000
    ia_set: int = 1_400_000

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")
        if not self.taia_recv > self.taia_send:
            raise ValueError("taia_recv must exceed taia_send")
        if not self.mia_recv > self.mia_send:
            raise ValueError("mia_recv must exceed mia_send")
        if not self.ia_set > self.ia_clear:
            raise ValueError("ia_set must exceed ia_clear")

    @classmethod
    def from_table(cls, table: dict[str, int]) -> "BackboneTimeouts":
        kw = {}
        for key, names in _TIMEOUT_NAMES.items():
            for name in names:
                if name in table:
                    kw[key] = int(table[name])
                    break
        return cls(**kw)


@dataclass(frozen=True)
class DbOp:
    """One replicated database update.  Replicas apply ops in key order."""
    time: int
    origin: int
    seq: int
    kind: str                               # notify | remove | effect
    notification: Notification | None = None
    verb: str = ""
    entity: EntityRef | None = None

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.time, self.origin, self.seq)


@dataclass(frozen=True)
class BbMessage:
    tag: str
    sender: int
    subject: int | None = None
    ops: tuple[DbOp, ...] = ()
    digest: int | None = None
    full: bool = False
    request: rc.ActionRequest | None = None
    removed: tuple[int, ...] = ()          # the manager's view, carried on MIA


class Replica:
    """A database rebuilt from an op log.  Out-of-order arrivals trigger a
    replay from scratch, so every replica holding the same ops holds the
    same state."""

    def __init__(self, topology: Topology, alpha_params: dict | None = None,
                 on_diagnostic: Callable[[str], None] | None = None):
        self.topology = topology
        self.alpha_params = alpha_params or {}
        self.ops: dict[tuple, DbOp] = {}
        self.db = Database(topology, self.alpha_params)
        self._last: tuple | None = None
        self.on_diagnostic = on_diagnostic or (lambda msg: None)

    def digest(self) -> int:
        return hash(tuple(sorted(self.ops)))

    def _apply(self, op: DbOp, quiet: bool = False) -> None:
        try:
            if op.kind == "notify":
                self.db.raise_event(op.notification)
            elif op.kind == "remove":
                self.db.remove(op.verb, op.entity)
            else:
                self.db.apply_effect(op.verb, op.entity)
        except ModelError as exc:
            if not quiet:
                self.on_diagnostic(str(exc))

    def merge(self, ops) -> list[DbOp]:
        """Add ``ops``; returns the ones that were new."""
        new = [op for op in ops if op.key not in self.ops]
        if not new:
            return []
        for op in new:
            self.ops[op.key] = op
        if self._last is None or min(op.key for op in new) > self._last:
            for op in sorted(new, key=lambda o: o.key):
                self._apply(op)
        else:
            fresh = {op.key for op in new}
            self.db = Database(self.topology, self.alpha_params)
            for key in sorted(self.ops):
                self._apply(self.ops[key], quiet=key not in fresh)
        self._last = max(self.ops)
        return new

    def error_list(self) -> list[tuple]:
        """Comparable summary of every entity's error list."""
        return [(e.kind, e.id, tuple((n.condition, n.subject, n.sim_time) for n in st.error_list))
                for e, st in sorted(self.db.states.items(), key=lambda kv: (kv[0].kind, kv[0].id))]


class Host(Protocol):
    sim: Simulator
    topology: Topology
    components: list["BackboneComponent"]

    def actuate(self, node: int, request: rc.ActionRequest) -> None: ...


class BackboneComponent:
    def __init__(self, node: int, host: Host, timeouts: BackboneTimeouts, boot_role: str,
                 interpreter: rc.Interpreter | None = None, alpha_params: dict | None = None,
                 boot_manager: int | None = None):
        self.node = node
        self.boot_manager = boot_manager
        self.host = host
        self.sim = host.sim
        self.t = timeouts
        self.boot_role = boot_role
        self.interpreter = interpreter
        self.alpha_params = alpha_params or {}
        self.nprocs = host.topology.nprocs
        self.alive = False
        self.runs = 0
        self.aborts = 0
        # both survive restarts so op keys and timer tokens stay unique
        self._seq = 0
        self._gen: dict[tuple, int] = {}
        self._reset(boot_role)

    def _reset(self, role: str) -> None:
        self.role = role
        self.manager: int | None = self.node if role == MANAGER else self.boot_manager
        self.view = {n: ALIVE for n in range(self.nprocs)}
        self.component_down: set[int] = set()
        self.teif_heard: set[int] = set()
        self.db = Replica(self.host.topology, self.alpha_params,
                          lambda msg: self.log("diagnostic", msg))
        self.outbox: list[DbOp] = []
        self.recovery_queue: deque[DbOp] = deque()
        self.recovering = False
        self.im_alive_flag = False

    # -- plumbing

    @property
    def name(self) -> str:
        return "backbone"

    def log(self, event: str, details: str = "") -> None:
        self.sim.log(self.node, self.name, event, details)

    def _token(self, key) -> int:
        self._gen[key] = self._gen.get(key, 0) + 1
        return self._gen[key]

    def _current(self, key, token) -> bool:
        return self.alive and self._gen.get(key) == token

    def _timer(self, key, duration: int, fn) -> None:
        tok = self._token(key)
        self.sim.timer(self.node, duration, lambda: self._current(key, tok) and fn())

    def peers(self) -> list[int]:
        return [n for n in range(self.nprocs) if n != self.node]

    def send(self, dst: int, msg: BbMessage) -> None:
        self.sim.send(self.node, dst, self.host.components[dst].receive, msg, msg.tag)

    def multicast(self, msg: BbMessage, include_removed: bool = False) -> None:
        for p in self.peers():
            if include_removed or self.view[p] != REMOVED:
                self.send(p, msg)

    # -- life cycle

    def boot(self, role: str | None = None, quiet: bool = False) -> None:
        """Start with the configured role, or with ``role`` and no known
        manager (the restart case)."""
        if role is not None:
            self.boot_manager = None
        self._reset(role or self.boot_role)
        self.alive = True
        if not quiet:
            self.log("role", self.role)
        self._schedule_clear()
        if self.role == MANAGER:
            self._start_manager()
        else:
            self._start_assistant()
        if role is not None:
            # a restarted node announces itself so every peer re-admits it
            self.multicast(BbMessage(TAIA, self.node), include_removed=True)

    def crash(self) -> None:
        """The component halts; its node keeps running."""
        if self.alive:
            self.log("crash", "component halted")
        self.alive = False

    def _start_manager(self) -> None:
        self.manager = self.node
        self._mia_tick()
        for p in self.peers():
            if self.view[p] == ALIVE:
                self._renew(p)

    def _start_assistant(self) -> None:
        self._taia_tick()
        self._renew(self.manager)

    def _schedule_clear(self) -> None:
        def clear():
            self.im_alive_flag = False
            self._schedule_clear()
        self._timer("ia_clear", self.t.ia_clear, clear)

    # -- periodic sends

    def _mia_tick(self) -> None:
        if self.role != MANAGER:
            return
        ops, self.outbox = tuple(self.outbox), []
        removed = tuple(n for n, v in self.view.items() if v == REMOVED)
        self.multicast(BbMessage(MIA, self.node, ops=ops, digest=self.db.digest(),
                                 removed=removed), include_removed=True)
        self._timer("mia_send", self.t.mia_send, self._mia_tick)

    def _taia_tick(self) -> None:
        if self.role != ASSISTANT:
            return
        if self.manager is not None and self.view.get(self.manager) == ALIVE:
            ops, self.outbox = tuple(self.outbox), []
            self.send(self.manager, BbMessage(TAIA, self.node, ops=ops))
        self._timer("taia_send", self.t.taia_send, self._taia_tick)

    # -- suspicion

    def _renew(self, peer: int | None) -> None:
        if self.role == MANAGER:
            self._timer(("recv", peer), self.t.taia_recv, lambda: self._missed(peer))
        else:
            # an assistant watches one manager at a time
            self._timer(("mia",), self.t.mia_recv, lambda: self._missed(peer))

    def _missed(self, peer: int | None) -> None:
        if peer is None:
            self.log("no-manager", "no manager heard from")
            self._elect()
            return
        if self.view[peer] != ALIVE or peer in self.component_down:
            return
        if self.role == ASSISTANT and peer != self.manager:
            return
        self.view[peer] = SUSPECTED
        self.log("suspect", f"node {peer}")
        if peer in self.teif_heard:
            self._component_verdict(peer)
        else:
            self._timer(("teif", peer), self.t.teif, lambda: self._teif_expired(peer))

    def _teif_expired(self, peer: int) -> None:
        if self.view[peer] != SUSPECTED:
            return
        self.view[peer] = REMOVED
        self.log("remove", f"node {peer}: node-crash verdict")
        if self.role == MANAGER:
            self.raise_events([Notification(NODE_CRASH, NODE, peer, sim_time=self.sim.now)])
        elif peer == self.manager:
            self._elect()

    def _component_verdict(self, peer: int) -> None:
        self.view[peer] = ALIVE
        self.component_down.add(peer)
        self._token(("teif", peer))
        self.log("component-crash", f"node {peer}: backbone component faulty, node kept")
        if self.role == MANAGER:
            self.raise_events([Notification(COMPONENT_CRASH, NODE, peer, sim_time=self.sim.now)])
        elif peer == self.manager:
            self._elect()

    def _heard_from(self, peer: int) -> None:
        if self.view[peer] == REMOVED:
            self.view[peer] = ALIVE
            self.log("readmit", f"node {peer}")
            if self.role == MANAGER:
                self.send(peer, BbMessage(DB_SYNC, self.node, ops=tuple(self.db.ops.values()),
                                          full=True))
        elif self.view[peer] == SUSPECTED:
            self.view[peer] = ALIVE
            self._token(("teif", peer))
            self.log("unsuspect", f"node {peer}")
        if peer in self.component_down:
            self.component_down.discard(peer)
        self.teif_heard.discard(peer)

    # -- election

    def elect(self) -> str:
        """Role this component takes under the current view."""
        return elect(self.view, self.node, self.component_down)

    def _elect(self) -> None:
        winner = max(_electable(self.view, self.node, self.component_down))
        if winner == self.node:
            self._become_manager()
        else:
            self.manager = winner
            self.log("elect", f"node {winner} is manager")
            self._renew(winner)

    def _become_manager(self) -> None:
        self.role = MANAGER
        self.manager = self.node
        self.log("role", MANAGER)
        self.multicast(BbMessage(ANNOUNCE, self.node, subject=self.node), include_removed=True)
        self._start_manager()

    def _demote(self, new_manager: int) -> None:
        self.role = ASSISTANT
        self.manager = new_manager
        self.recovering = False
        self.recovery_queue.clear()
        self.log("demote", f"merging under manager node {new_manager}")
        self.log("role", ASSISTANT)
        self.send(new_manager, BbMessage(DB_SYNC, self.node, ops=tuple(self.db.ops.values()),
                                         full=True))
        self._start_assistant()

    def _adopt(self, m: int) -> None:
        if self.manager != m:
            self.manager = m
            self.log("manager", f"node {m}")
        self._renew(m)

    # -- messages

    def receive(self, msg: BbMessage) -> None:
        if not self.alive:
            return
        s = msg.sender
        if msg.tag in (MIA, TAIA, ANNOUNCE, DB_SYNC, NOTIFY):
            self._heard_from(s)
        handler = getattr(self, f"_on_{msg.tag.lower()}")
        handler(msg)

    def _on_mia(self, msg: BbMessage) -> None:
        s = msg.sender
        if self.role == MANAGER:
            if s > self.node:
                self._demote(s)
                self._merge(msg.ops)
            return
        cur = self.manager
        if cur is None or s == cur or s > cur or self.view[cur] != ALIVE \
                or cur in self.component_down:
            self._adopt(s)
            self._sync_view(s, msg.removed)
            self._merge(msg.ops)
            if msg.digest is not None and msg.digest != self.db.digest():
                self.send(s, BbMessage(DB_SYNC, self.node, ops=tuple(self.db.ops.values()),
                                       full=True))

    def _sync_view(self, manager: int, removed) -> None:
        for n in self.view:
            if n in (self.node, manager):
                continue
            if n in removed and self.view[n] != REMOVED:
                self.view[n] = REMOVED
                self.log("remove", f"node {n}: reported by manager")
            elif n not in removed and self.view[n] == REMOVED:
                self.view[n] = ALIVE
                self.log("readmit", f"node {n}: reported by manager")

    def _on_taia(self, msg: BbMessage) -> None:
        if self.role != MANAGER:
            return
        self._renew(msg.sender)
        self.outbox.extend(self._merge(msg.ops))

    def _on_announce(self, msg: BbMessage) -> None:
        m = msg.subject
        if self.role == MANAGER:
            if m > self.node:
                self._demote(m)
            return
        cur = self.manager
        if cur is None or m >= cur or self.view[cur] != ALIVE or cur in self.component_down:
            self._adopt(m)

    def _on_teif(self, msg: BbMessage) -> None:
        x = msg.subject
        if x == self.node:
            return
        self.teif_heard.add(x)
        if self.view[x] == SUSPECTED:
            self._component_verdict(x)

    def _on_notify(self, msg: BbMessage) -> None:
        new = self._merge(msg.ops)
        if self.role == MANAGER:
            self._enqueue(new)

    def _on_db_sync(self, msg: BbMessage) -> None:
        theirs = {op.key for op in msg.ops}
        new = self._merge(msg.ops)
        if self.role == MANAGER:
            self.outbox.extend(new)
        if msg.full:
            missing = tuple(op for k, op in sorted(self.db.ops.items()) if k not in theirs)
            if missing:
                self.send(msg.sender, BbMessage(DB_SYNC, self.node, ops=missing))

    def _on_action(self, msg: BbMessage) -> None:
        self.host.actuate(self.node, msg.request)

    def _merge(self, ops) -> list[DbOp]:
        return self.db.merge(ops)

    # -- local events

    def _op(self, kind: str, notification=None, verb: str = "", entity=None) -> DbOp:
        self._seq += 1
        return DbOp(self.sim.now, self.node, self._seq, kind, notification, verb, entity)

    def raise_events(self, notifications: list[Notification]) -> None:
        """Notifications from local detectors or tasks.  Batches holding
        an error are pushed at once; others ride on the next heartbeat."""
        if not self.alive:
            return
        ops = [self._op("notify", n) for n in notifications]
        for n in notifications:
            if not self.host.topology.exists(n.entity):
                self.log("diagnostic", f"notification about undeclared {n.entity}")
        self.db.merge(ops)
        if any(is_error(n.condition) for n in notifications):
            self.multicast(BbMessage(NOTIFY, self.node, ops=tuple(ops)))
            if self.role == MANAGER:
                self._enqueue(ops)
        else:
            self.outbox.extend(ops)

    def _publish(self, ops: list[DbOp]) -> None:
        self.db.merge(ops)
        self.multicast(BbMessage(NOTIFY, self.node, ops=tuple(ops)))

    # -- recovery

    def _enqueue(self, ops) -> None:
        for op in ops:
            if op.kind == "notify" and is_error(op.notification.condition) \
                    and self.host.topology.exists(op.notification.entity):
                self.recovery_queue.append(op)
        self._maybe_recover()

    def _maybe_recover(self) -> None:
        if self.recovering or not self.recovery_queue or self.role != MANAGER or not self.alive:
            return
        if self.interpreter is None:
            self.recovery_queue.clear()
            return
        op = self.recovery_queue.popleft()
        n = op.notification
        self.recovering = True
        self.runs += 1
        self.log("recovery-start", f"condition {n.condition} on {n.entity}")
        try:
            result = self.interpreter.execute(self.db.db.snapshot())
        except (rc.VmError, ModelError) as exc:
            self.aborts += 1
            self.log("recovery-abort", str(exc))
            self.recovering = False
            self.sim.after(1, self._maybe_recover, node=self.node)
            return
        self._dispatch(result.actions, 0)

    def _dispatch(self, actions: list[rc.ActionRequest], i: int) -> None:
        while i < len(actions):
            a = actions[i]
            i += 1
            if a.verb == "pause":
                self.sim.timer(self.node, max(1, a.value), lambda: self._dispatch(actions, i))
                return
            self._perform(a)
        self.log("recovery-end", f"{len(actions)} actions")
        self.recovering = False
        self.sim.after(1, self._maybe_recover, node=self.node)

    def _perform(self, a: rc.ActionRequest) -> None:
        topo = self.host.topology
        if a.verb == "call":
            self.log("call", f"function {a.value} args {list(a.args)}")
            return
        if a.verb == "remove":
            sel = "phase" if a.value == rc.REMOVE_PHASE else "any"
            self._publish([self._op("remove", verb=sel, entity=e) for e in a.targets])
            return
        if a.verb in ("stop", "start", "restart", "isolate", "enable", "reboot"):
            self._publish([self._op("effect", verb=a.verb, entity=e) for e in a.targets])
        for e in a.targets:
            members = topo.members(e) if e.kind == GROUP else [e]
            for m in members:
                dst = m.id if m.kind == NODE else topo.tasks[m.id].node
                req = rc.ActionRequest(a.verb, (m,), a.value, a.args, a.subject, a.pc)
                msg = BbMessage(ACTION, self.node, request=req)
                if dst == self.node:
                    self.host.actuate(self.node, req)
                else:
                    self.send(dst, msg)


def _electable(view: dict[int, str], self_node: int, excluded=()) -> list[int]:
    return [n for n in view if n == self_node or (view[n] == ALIVE and n not in excluded)]


def elect(view: dict[int, str], self_node: int, excluded=()) -> str:
    """Manager iff ``self_node`` carries the highest label among the nodes
    it considers alive."""
    return MANAGER if max(_electable(view, self_node, excluded)) == self_node else ASSISTANT


class IatGuard:
    """The I'm-Alive task of one node.  It sets the component's flag every
    ``ia_set`` ticks; finding it still set means the component stopped
    clearing it, and every other node gets a TEIF."""

    def __init__(self, node: int, host: Host, timeouts: BackboneTimeouts):
        self.node = node
        self.host = host
        self.t = timeouts
        self.observed_set = 0

    def start(self) -> None:
        self.host.sim.timer(self.node, self.t.ia_set, self._check)

    def _check(self) -> None:
        comp = self.host.components[self.node]
        if comp.im_alive_flag:
            self.observed_set += 1
            self.host.sim.log(self.node, "iat", "teif", f"backbone component of node {self.node}")
            for p in range(self.host.topology.nprocs):
                if p != self.node:
                    self.host.sim.send(self.node, p, self.host.components[p].receive,
                                       BbMessage(TEIF, self.node, subject=self.node), TEIF)
        comp.im_alive_flag = True
        self.host.sim.timer(self.node, self.t.ia_set, self._check)
