"""Deterministic discrete-event simulation of the distributed platform.

One tick is one microsecond.  Events run in (time, insertion order).
Every event bound to a node carries the node's crash epoch and is dropped
if the node crashed or restarted since it was scheduled, which makes
crashes halting.  Links add a seeded delay, may lose messages, honour
partitions at both send and delivery time, and keep FIFO order per
(source, destination) pair.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from .lang.symbols import InjectionSpec, WatchdogConfig
from .model import DEADLINE_MISSED, PHASE_SET, TASK, Notification

DEFAULT_DELAY = 1000
DEFAULT_JITTER = 500
LOCAL_DELAY = 1

# phase reported by a watchdog that found its heartbeat missing
WATCHDOG_EXPIRED = 9998


class ScenarioError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"scenario line {line}: {msg}")
        self.line = line


@dataclass
class Partition:
    start: int
    end: int
    side_a: frozenset[int]
    side_b: frozenset[int]

    def separates(self, a: int, b: int, t: int) -> bool:
        if not self.start <= t < self.end:
            return False
        return (a in self.side_a and b in self.side_b) or (a in self.side_b and b in self.side_a)


@dataclass
class LinkModel:
    delay: int = DEFAULT_DELAY
    jitter: int = DEFAULT_JITTER
    omission_p: float = 0.0
    partitions: list[Partition] = field(default_factory=list)

    def __post_init__(self):
        if self.delay < 1 or self.jitter < 0 or self.jitter >= self.delay:
            raise ValueError("need delay >= 1 and 0 <= jitter < delay")
        if not 0.0 <= self.omission_p <= 1.0:
            raise ValueError("omission probability outside [0, 1]")

    @property
    def max_delay(self) -> int:
        return self.delay + self.jitter

    def blocked(self, a: int, b: int, t: int) -> bool:
        return any(p.separates(a, b, t) for p in self.partitions)


@dataclass
class Scenario:
    seed: int = 0
    until: int = 1_000_000
    link: LinkModel = field(default_factory=LinkModel)
    restarts: list[tuple[int, int]] = field(default_factory=list)        # (node, time)
    crashes: list[tuple[int, int]] = field(default_factory=list)         # (node, time)
    bb_crashes: list[tuple[int, int]] = field(default_factory=list)      # (node, time)
    injections: list[InjectionSpec] = field(default_factory=list)
    heartbeats: list[tuple[int, int, int, int, int]] = field(default_factory=list)
    # (source task, target uid, period, start, stop)
    votes: list[tuple[int, int, int, int, int]] = field(default_factory=list)
    # (nv id, first time, period, count, client task)
    drift: dict[int, float] = field(default_factory=dict)
    verbose: bool = False


def _nodes(text: str, line: int) -> frozenset[int]:
    try:
        return frozenset(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ScenarioError(line, f"bad node list {text!r}") from None


def parse_scenario(text: str) -> Scenario:
    """Line-based scenario description; '#' starts a comment."""
    sc = Scenario()
    delay, jitter, omission = DEFAULT_DELAY, DEFAULT_JITTER, 0.0
    parts: list[Partition] = []
    for k, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        w = line.split()
        try:
            key = w[0].lower()
            if key == "seed":
                sc.seed = int(w[1])
            elif key == "until":
                sc.until = int(w[1])
            elif key == "delay":
                delay, jitter = int(w[1]), int(w[2])
            elif key == "omission":
                omission = float(w[1])
            elif key == "partition":
                a, b = " ".join(w[3:]).split("|")
                parts.append(Partition(int(w[1]), int(w[2]), _nodes(a, k), _nodes(b, k)))
            elif key == "restart" and w[1] == "node" and w[3] == "at":
                sc.restarts.append((int(w[2]), int(w[4])))
            elif key == "crash" and w[1] == "node" and w[3] == "at":
                sc.crashes.append((int(w[2]), int(w[4])))
            elif key == "crash" and w[1] == "backbone" and w[3] == "at":
                sc.bb_crashes.append((int(w[2]), int(w[4])))
            elif key == "inject":
                # inject BFAULT|MFAULT node|component <id> at <t>
                sc.injections.append(InjectionSpec(w[1].upper(), w[2].upper(), int(w[3]),
                                                   int(w[5]), k))
            elif key == "heartbeat":
                # heartbeat <task> to <uid> every <period> [from <t>] [until <t>]
                if w[2] != "to" or w[4] != "every":
                    raise ValueError
                opts = dict(zip(w[6::2], w[7::2]))
                sc.heartbeats.append((int(w[1]), int(w[3]), int(w[5]),
                                      int(opts.get("from", 0)), int(opts.get("until", -1))))
            elif key == "vote":
                # vote <nv id> from <client> at <t> every <period> count <n>
                opts = dict(zip(w[2::2], w[3::2]))
                sc.votes.append((int(w[1]), int(opts["at"]), int(opts.get("every", 0)),
                                 int(opts.get("count", 1)), int(opts["from"])))
            elif key == "drift":
                sc.drift[int(w[1])] = float(w[2])
            elif key == "verbose":
                sc.verbose = w[1].lower() in ("1", "on", "yes", "true")
            else:
                raise ScenarioError(k, f"unknown key {w[0]!r}")
        except (IndexError, ValueError, KeyError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(k, f"cannot parse {line!r}") from None
    try:
        sc.link = LinkModel(delay, jitter, omission, parts)
    except ValueError as exc:
        raise ScenarioError(0, str(exc)) from None
    return sc


@dataclass
class Delivery:
    sent: int
    received: int
    src: int
    dst: int
    tag: str


class Simulator:
    def __init__(self, nprocs: int, seed: int = 0, link: LinkModel | None = None,
                 drift: dict[int, float] | None = None, verbose: bool = False):
        self.nprocs = nprocs
        self.now = 0
        self.link = link or LinkModel()
        self.rng = random.Random(seed)
        self.fault_rng = random.Random(seed * 7919 + 17)
        self.drift = {n: 1.0 for n in range(nprocs)}
        for n, d in (drift or {}).items():
            if not 0.5 <= d <= 1.5:
                raise ValueError("drift factor outside [0.5, 1.5]")
            self.drift[n] = d
        self.verbose = verbose
        self.trace: list[str] = []
        self.deliveries: list[Delivery] = []
        self.up = [True] * nprocs
        self.epoch = [0] * nprocs
        self._queue: list = []
        self._seq = 0
        self._fifo: dict[tuple[int, int], int] = {}
        self.crash_hooks: list[Callable[[int], None]] = []
        self.restart_hooks: list[Callable[[int], None]] = []

    # -- clock

    def local_time(self, node: int) -> int:
        return int(self.now * self.drift[node])

    def local_to_global(self, node: int, duration: int) -> int:
        return max(1, round(duration / self.drift[node]))

    # -- tracing

    def log(self, node, actor: str, event: str, details: str = "") -> None:
        self.trace.append(f"{self.now}\t{node}\t{actor}\t{event}\t{details}")

    def trace_text(self) -> str:
        return "".join(line + "\n" for line in self.trace)

    # -- events

    def at(self, time: int, fn: Callable, *args, node: int | None = None) -> None:
        if time < self.now:
            raise AssertionError(f"event scheduled in the past ({time} < {self.now})")
        ep = self.epoch[node] if node is not None else None
        heapq.heappush(self._queue, (time, self._seq, node, ep, fn, args))
        self._seq += 1

    def after(self, delay: int, fn: Callable, *args, node: int | None = None) -> None:
        self.at(self.now + delay, fn, *args, node=node)

    def timer(self, node: int, duration: int, fn: Callable, *args) -> None:
        """Node-local timer: ``duration`` is measured on the node's clock."""
        self.after(self.local_to_global(node, duration), fn, *args, node=node)

    def run_until(self, t: int) -> list[str]:
        while self._queue and self._queue[0][0] <= t:
            time, _, node, ep, fn, args = heapq.heappop(self._queue)
            if node is not None and (not self.up[node] or self.epoch[node] != ep):
                continue
            self.now = time
            fn(*args)
        self.now = max(self.now, t)
        return self.trace

    # -- messaging

    def send(self, src: int, dst: int, deliver: Callable[[Any], None], payload: Any,
             tag: str = "msg") -> bool:
        """Queue ``payload`` from node ``src`` to node ``dst``.

        Returns False when the message is lost at send time.
        """
        if not self.up[src]:
            return False
        if src == dst:
            self.after(LOCAL_DELAY, self._deliver, src, dst, deliver, payload, tag, self.now,
                       node=dst)
            return True
        if self.link.blocked(src, dst, self.now):
            if self.verbose:
                self.log(src, "net", "blocked", f"{tag} to node {dst}")
            return False
        if self.link.omission_p and self.rng.random() < self.link.omission_p:
            if self.verbose:
                self.log(src, "net", "lost", f"{tag} to node {dst}")
            return False
        d = self.link.delay
        if self.link.jitter:
            d += self.rng.randint(-self.link.jitter, self.link.jitter)
        when = max(self.now + d, self._fifo.get((src, dst), 0) + 1)
        self._fifo[(src, dst)] = when
        self.at(when, self._deliver, src, dst, deliver, payload, tag, self.now, node=dst)
        return True

    def _deliver(self, src, dst, deliver, payload, tag, sent):
        if src != dst and self.link.blocked(src, dst, self.now):
            if self.verbose:
                self.log(dst, "net", "blocked", f"{tag} from node {src}")
            return
        self.deliveries.append(Delivery(sent, self.now, src, dst, tag))
        if self.verbose:
            self.log(dst, "net", "deliver", f"{tag} from node {src}")
        deliver(payload)

    # -- faults

    def crash_node(self, node: int) -> None:
        if not self.up[node]:
            return
        self.log(node, "sim", "crash", "node halted")
        self.up[node] = False
        self.epoch[node] += 1
        for hook in self.crash_hooks:
            hook(node)

    def restart_node(self, node: int) -> None:
        if self.up[node]:
            return
        self.up[node] = True
        self.epoch[node] += 1
        self.log(node, "sim", "restart", "node back up")
        for hook in self.restart_hooks:
            hook(node)


class WatchdogActor:
    """Expects a heartbeat at least every ``config.period`` ticks.

    It fires once per silence: a new heartbeat re-arms it.
    """

    def __init__(self, config: WatchdogConfig, node: int, sim: Simulator,
                 raise_events: Callable[[list[Notification]], None],
                 warn_task: Callable[[int, int], None] | None = None,
                 request: Callable[[str, int], None] | None = None):
        if config.period <= 0:
            raise ValueError("watchdog period must be positive")
        self.config = config
        self.node = node
        self.sim = sim
        self.raise_events = raise_events
        self.warn_task = warn_task
        self.request = request
        self.last_heartbeat = sim.now
        self.expired_count = 0
        self._armed = 0
        self.alive = True

    @property
    def name(self) -> str:
        return f"watchdog{self.config.watchdog_id}"

    def start(self) -> None:
        self.last_heartbeat = self.sim.now
        self._arm()

    def _arm(self) -> None:
        self._armed += 1
        self.sim.timer(self.node, self.config.period + 1, self._check, self._armed)

    def heartbeat(self) -> None:
        if not self.alive:
            return
        self.last_heartbeat = self.sim.now
        self._arm()

    def _check(self, token: int) -> None:
        if token != self._armed or not self.alive:
            return
        if self.sim.now - self.last_heartbeat > self.config.period:
            self.fire()

    def fire(self) -> list[Notification]:
        self.expired_count += 1
        cfg = self.config
        watched = cfg.watched if cfg.watched is not None else cfg.watchdog_id
        self.sim.log(self.node, self.name, "expired",
                     f"no heartbeat since {self.last_heartbeat}")
        action = cfg.on_error[0]
        out: list[Notification] = []
        if action == "warn_backbone":
            out = [Notification(PHASE_SET, TASK, cfg.watchdog_id, (WATCHDOG_EXPIRED,),
                                sim_time=self.sim.now),
                   Notification(DEADLINE_MISSED, TASK, watched, (cfg.watchdog_id,),
                                sim_time=self.sim.now)]
            self.raise_events(out)
        elif action == "warn_task" and self.warn_task is not None:
            self.warn_task(cfg.on_error[1], watched)
        elif action in ("reboot", "restart") and self.request is not None:
            self.request(action, watched)
        return out
