"""A compiled strategy plus a scenario, assembled into one simulated
platform: backbone components, I'm-Alive guards, user tasks, watchdogs
and voting sessions, all driven by the simnet event loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from . import rcode as rc
from .backbone import ASSISTANT, MANAGER, BackboneComponent, BackboneTimeouts, IatGuard
from .lang.symbols import InjectionSpec, SymbolTable
from .model import NODE, TASK, TASK_STARTED, Notification, Topology
from .simnet import Scenario, ScenarioError, Simulator, WatchdogActor
from .voting import VoterConfig, VotingSession

REBOOT_DELAY = 100_000


@dataclass
class TaskActor:
    uid: int
    node: int
    running: bool = False
    isolated: bool = False
    inbox: list[tuple[int, Any]] = field(default_factory=list)

    @property
    def name(self) -> str:
        return f"T{self.uid}"


def _corrupt(value, rng):
    if isinstance(value, bool):
        return not value
    if isinstance(value, int):
        return value + 1 + rng.randrange(1 << 16)
    if isinstance(value, float):
        return value + 1.0 + rng.random()
    if isinstance(value, (bytes, bytearray)):
        b = bytearray(value or b"\0")
        b[0] ^= 1 + rng.randrange(255)
        return bytes(b)
    return ("corrupted", value)


class System:
    def __init__(self, symtab: SymbolTable, program: rc.RcodeProgram | None,
                 scenario: Scenario | None = None,
                 callbacks: dict[int, Callable] | None = None,
                 version_fn: Callable[[int, Any], Any] | None = None):
        sc = scenario or Scenario()
        self.symtab = symtab
        self.scenario = sc
        self.topology: Topology = symtab.topology()
        if self.topology.nprocs < 1:
            raise ScenarioError(0, "the strategy declares no nodes")
        self.nprocs = self.topology.nprocs
        self.sim = Simulator(self.nprocs, sc.seed, sc.link, sc.drift, sc.verbose)
        self.timeouts = BackboneTimeouts.from_table(symtab.backbone_timeouts)
        self.interpreter = rc.Interpreter(program, callbacks) if program is not None else None

        roles = dict(symtab.roles)
        managers = sorted(n for n, r in roles.items() if r == "manager" and n < self.nprocs)
        boot_manager = managers[0] if managers else self.nprocs - 1
        self.components = [
            BackboneComponent(n, self, self.timeouts,
                              MANAGER if n == boot_manager else ASSISTANT,
                              self.interpreter, symtab.alpha_params, boot_manager)
            for n in range(self.nprocs)]
        self.iats = [IatGuard(n, self, self.timeouts) for n in range(self.nprocs)]
        self.tasks = {t.unique_id: TaskActor(t.unique_id, t.node) for t in symtab.tasks}
        self.corrupt_next: set[int] = set()

        self.watchdogs: dict[int, WatchdogActor] = {}
        for w in symtab.watchdogs:
            node = self.tasks[w.watchdog_id].node if w.watchdog_id in self.tasks else 0
            self.watchdogs[w.watchdog_id] = WatchdogActor(
                w, node, self.sim, lambda ns, node=node: self.components[node].raise_events(ns),
                warn_task=lambda uid, watched, node=node: self._local_post(
                    node, uid, ("warn", watched)),
                request=lambda verb, uid, node=node: self._watchdog_request(node, verb, uid))

        self.sessions: dict[int, VotingSession] = {}
        self._voter_of: dict[int, VotingSession] = {}
        wakeup = symtab.constants.get("WAKEUP")
        for nv in symtab.nversions:
            cfg = VoterConfig.from_nversion(nv, set(self.tasks))
            s = VotingSession(nv.nv_id, cfg, self, version_fn, wakeup)
            self.sessions[nv.nv_id] = s
            for uid in (*cfg.members, *cfg.spares):
                self._voter_of[uid] = s

        self.sim.crash_hooks.append(self._on_crash)
        self.sim.restart_hooks.append(self._on_restart)
        self._schedule()

    # -- set-up

    def _schedule(self) -> None:
        sc, sim = self.scenario, self.sim
        sim.at(0, self._boot)
        for inj in [*self.symtab.injections, *sc.injections]:
            self.inject(inj)
        for node, t in sc.crashes:
            self._check_node(node)
            sim.at(t, sim.crash_node, node)
        for node, t in sc.restarts:
            self._check_node(node)
            sim.at(t, sim.restart_node, node)
        for node, t in sc.bb_crashes:
            self._check_node(node)
            sim.at(t, self.components[node].crash, node=node)
        for src, dst, period, start, stop in sc.heartbeats:
            if src not in self.tasks:
                raise ScenarioError(0, f"heartbeat source {src} is not a declared task")
            if period <= 0:
                raise ScenarioError(0, "heartbeat period must be positive")
            sim.at(start + period, self._heartbeat, src, dst, period, stop)
        for nv, first, period, count, client in sc.votes:
            if nv not in self.sessions:
                raise ScenarioError(0, f"no N-version unit {nv}")
            if client not in self.tasks:
                raise ScenarioError(0, f"client {client} is not a declared task")
            for k in range(count):
                sim.at(first + k * period, self._vote_request, nv, client, k + 1)

    def _check_node(self, node: int) -> None:
        if not 0 <= node < self.nprocs:
            raise ScenarioError(0, f"node {node} does not exist")

    def _boot(self) -> None:
        for c in self.components:
            c.boot()
        for g in self.iats:
            g.start()
        for n in range(self.nprocs):
            self._start_tasks(n)

    def _start_tasks(self, node: int) -> None:
        started = []
        for t in self.tasks.values():
            if t.node == node:
                t.running = True
                t.isolated = False
                if not (t.uid in self._voter_of and t.uid in self._voter_of[t.uid].cfg.spares):
                    started.append(Notification(TASK_STARTED, TASK, t.uid, sim_time=self.sim.now))
        for w in self.watchdogs.values():
            if w.node == node:
                w.alive = True
                w.start()
        if started:
            self.components[node].raise_events(started)

    def _on_crash(self, node: int) -> None:
        self.components[node].alive = False
        for t in self.tasks.values():
            if t.node == node:
                t.running = False
        for w in self.watchdogs.values():
            if w.node == node:
                w.alive = False

    def _on_restart(self, node: int) -> None:
        self.components[node].boot(ASSISTANT)
        self.iats[node].start()
        self._start_tasks(node)

    # -- fault injection

    def inject(self, spec: InjectionSpec) -> None:
        if spec.after < 0:
            raise ScenarioError(spec.line, "injection time must be >= 0")
        if spec.what == "NODE":
            self._check_node(spec.target)
        elif spec.target not in self.tasks:
            raise ScenarioError(spec.line, f"component {spec.target} is not a declared task")
        self.sim.at(spec.after, self._fire_injection, spec)

    def _fire_injection(self, spec: InjectionSpec) -> None:
        if spec.fault == "BFAULT":
            if spec.what == "NODE":
                self.sim.crash_node(spec.target)
            else:
                t = self.tasks[spec.target]
                if self.sim.up[t.node]:
                    self.sim.log(t.node, t.name, "crash", "component halted")
                t.running = False
                if spec.target in self.watchdogs:
                    self.watchdogs[spec.target].alive = False
        else:
            uids = ([t.uid for t in self.tasks.values() if t.node == spec.target]
                    if spec.what == "NODE" else [spec.target])
            for uid in uids:
                self.corrupt_next.add(uid)
                self.sim.log(self.tasks[uid].node, f"T{uid}", "mfault", "next output corrupted")

    # -- messaging

    def _sender_ok(self, uid: int) -> bool:
        t = self.tasks.get(uid)
        return t is not None and t.running and not t.isolated and self.sim.up[t.node]

    def post(self, src_uid: int, dst_uid: int, payload) -> None:
        """Send from task ``src_uid`` to a task, a logical or an N-version unit."""
        if not self._sender_ok(src_uid):
            return
        src = self.tasks[src_uid].node
        self._route(src, dst_uid, payload)

    def _route(self, src_node: int, dst_uid: int, payload) -> None:
        if dst_uid in self.topology.tasks:
            targets = [dst_uid]
        elif dst_uid in self.topology.groups:
            targets = [m.id for m in self.topology.members(self.topology.resolve(dst_uid))]
        elif dst_uid in self.watchdogs:
            w = self.watchdogs[dst_uid]
            self.sim.send(src_node, w.node, lambda p: w.heartbeat(), payload, "heartbeat")
            return
        else:
            self.sim.log(src_node, "bsl", "undeliverable", f"no entity {dst_uid}")
            return
        for uid in targets:
            node = self.tasks[uid].node
            self.sim.send(src_node, node, lambda p, uid=uid: self._deliver(uid, p), payload,
                          "app")

    def _local_post(self, node: int, dst_uid: int, payload) -> None:
        self._route(node, dst_uid, payload)

    def _deliver(self, uid: int, payload) -> None:
        t = self.tasks[uid]
        if not t.running or t.isolated:
            return
        t.inbox.append((self.sim.now, payload))
        quiet = isinstance(payload, tuple) and payload[0] in ("value", "heartbeat", "request")
        if not quiet:
            self.sim.log(t.node, t.name, "recv", repr(payload))
        if payload == ("heartbeat",) and uid in self.watchdogs:
            self.watchdogs[uid].heartbeat()
        s = self._voter_of.get(uid)
        if s is not None:
            s.on_message(uid, payload)

    def _heartbeat(self, src: int, dst: int, period: int, stop: int) -> None:
        if 0 <= stop < self.sim.now:
            return
        if self._sender_ok(src):
            self.sim.log(self.tasks[src].node, f"T{src}", "heartbeat", f"to {dst}")
            self.post(src, dst, ("heartbeat",))
        self.sim.after(period, self._heartbeat, src, dst, period, stop)

    def _vote_request(self, nv: int, client: int, rnd: int) -> None:
        if self._sender_ok(client):
            self.sessions[nv].request(client, rnd, rnd)

    def _watchdog_request(self, node: int, verb: str, uid: int) -> None:
        ent = self.topology.resolve(uid)
        self.actuate(self.tasks[uid].node if ent.kind == TASK else node,
                     rc.ActionRequest(verb, (ent,)))

    # -- VotingHost

    def now(self) -> int:
        return self.sim.now

    def timer(self, uid: int, duration: int, fn) -> None:
        t = self.tasks[uid]
        self.sim.timer(t.node, duration, lambda: t.running and fn())

    def raise_events(self, uid: int, notifications: list[Notification]) -> None:
        self.components[self.tasks[uid].node].raise_events(notifications)

    def take_corruption(self, uid: int, value):
        if uid not in self.corrupt_next:
            return value
        self.corrupt_next.discard(uid)
        bad = _corrupt(value, self.sim.fault_rng)
        self.sim.log(self.tasks[uid].node, f"T{uid}", "corrupted", f"{value!r} -> {bad!r}")
        return bad

    def log(self, uid: int, event: str, details: str) -> None:
        node = self.tasks[uid].node if uid in self.tasks else 0
        self.sim.log(node, f"T{uid}", event, details)

    # -- backbone host

    def actuate(self, node: int, request: rc.ActionRequest) -> None:
        """Local part of a recovery action on ``node``."""
        verb = request.verb
        for e in request.targets:
            if e.kind == NODE:
                self._actuate_node(e.id, verb, request)
                continue
            t = self.tasks.get(e.id)
            if t is None:
                continue
            if verb == "send":
                self._deliver(t.uid, request.value)
                continue
            if verb == "warn":
                subj = request.subject
                self._deliver(t.uid, ("warn", request.value,
                                      None if subj is None else (subj.kind, subj.id),
                                      request.args))
                continue
            self.sim.log(t.node, t.name, verb, "recovery action")
            if verb == "stop":
                t.running = False
            elif verb in ("start", "restart", "reboot"):
                t.running = True
            elif verb == "isolate":
                t.isolated = True
            elif verb == "enable":
                t.isolated = False

    def _actuate_node(self, node: int, verb: str, request: rc.ActionRequest) -> None:
        on_node = [t for t in self.tasks.values() if t.node == node]
        if verb in ("send", "warn"):
            for t in on_node:
                self.actuate(node, rc.ActionRequest(verb, (self.topology.resolve(t.uid),),
                                                    request.value, request.args,
                                                    request.subject))
            return
        self.sim.log(node, "bsl", verb, f"node {node}")
        if verb == "reboot" or verb == "restart":
            self.sim.crash_node(node)
            self.sim.after(REBOOT_DELAY, self.sim.restart_node, node)
        elif verb == "stop":
            self.sim.crash_node(node)
        elif verb in ("isolate", "enable"):
            for t in on_node:
                t.isolated = verb == "isolate"

    # -- running and inspection

    def run(self, until: int | None = None) -> list[str]:
        return self.sim.run_until(self.scenario.until if until is None else until)

    def live_components(self) -> list[BackboneComponent]:
        return [c for c in self.components if self.sim.up[c.node] and c.alive]

    def managers(self) -> list[int]:
        return [c.node for c in self.live_components() if c.role == MANAGER]
