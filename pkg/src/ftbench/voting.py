"""Distributed voting: metric-based vote algorithms and restoring-organ
sessions with one voter per member plus optional spares.

Vote definitions used here:

* majority: group values into clusters (transitive closure of d <= eps);
  a cluster holding more than N/2 of the N members wins.
* plurality: the strictly largest cluster wins.
* median: drop the pair at maximum distance until at most two values
  remain; the survivor with the lowest member index wins.
* weighted_average: uniform mean of scalar values times ``scaling``.
* consensus: every pair within eps, else no consensus.

Ties are broken by member index, never by arrival order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

from .gossip import PIPELINED, build_permutation, simulate_run
from .model import DEADLINE_MISSED, HAS_FAILED, PHASE_SET, TASK, VALUE_FAULT, Notification

ALGORITHMS = ("majority", "median", "plurality", "weighted_average", "consensus")

PHASE_IDLE = 0
PHASE_EXCHANGING = 1
PHASE_VOTED = 2
PHASE_FAILED = HAS_FAILED

DEFAULT_TIMEOUT = 100_000


class ConfigError(ValueError):
    pass


def _scalar(v) -> int | float:
    if isinstance(v, (bytes, bytearray)):
        if len(v) > 8:
            raise TypeError("numeric payloads are at most 8 bytes")
        return int.from_bytes(v, "little", signed=True)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError(f"not a scalar payload: {v!r}")
    return v


def bitwise(a, b) -> int:
    return 0 if a == b else 1


def abs_num(a, b):
    return abs(_scalar(a) - _scalar(b))


METRICS: dict[str, Callable[[Any, Any], float]] = {"bitwise": bitwise, "abs_num": abs_num}


def register_metric(name: str, fn: Callable[[Any, Any], float], samples=()) -> None:
    """Add a distance.  ``samples`` are checked for d(x,x)=0 and symmetry."""
    samples = list(samples)
    for x in samples:
        if fn(x, x) != 0:
            raise ConfigError(f"metric {name}: d(x,x) != 0 for {x!r}")
        for y in samples:
            if fn(x, y) != fn(y, x):
                raise ConfigError(f"metric {name}: not symmetric on {x!r}, {y!r}")
    METRICS[name] = fn


def metric(name: str) -> Callable[[Any, Any], float]:
    try:
        return METRICS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown metric {name!r}") from None


@dataclass(frozen=True)
class VoteResult:
    value: Any
    no_consensus: bool
    winners: tuple = ()
    minority: tuple = ()


NO_CONSENSUS = "no_consensus"


def _clusters(keys, values, d, eps) -> list[list]:
    parent = {k: k for k in keys}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            if d(values[a], values[b]) <= eps:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb, key=keys.index)] = min(ra, rb, key=keys.index)
    groups: dict = {}
    for k in keys:
        groups.setdefault(find(k), []).append(k)
    return sorted(groups.values(), key=lambda g: keys.index(g[0]))


def vote(values: dict, algorithm: str = "majority", metric_name: str = "bitwise",
         epsilon: float = 0.0, scaling: float = 1.0, n: int | None = None,
         order=None) -> VoteResult:
    """Vote over ``values`` (member -> payload; absent members left out).

    ``n`` is the full member count (absent ones included) and ``order``
    the member order used for tie-breaks, default sorted keys.
    """
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    if epsilon < 0:
        raise ConfigError("epsilon must be >= 0")
    if len(values) < 2:
        raise ValueError("need at least two present values")
    keys = [k for k in (order or sorted(values)) if k in values]
    n = len(keys) if n is None else n
    d = metric(metric_name)
    none = VoteResult(NO_CONSENSUS, True)

    if algorithm == "weighted_average":
        nums = [_scalar(values[k]) for k in keys]
        return VoteResult(sum(nums) / len(nums) * scaling, False, tuple(keys), ())

    if algorithm == "median":
        alive = list(keys)
        while len(alive) > 2:
            best = None
            for i, a in enumerate(alive):
                for b in alive[i + 1:]:
                    dist = d(values[a], values[b])
                    if best is None or dist > best[0]:
                        best = (dist, a, b)
            alive.remove(best[1])
            alive.remove(best[2])
        res = values[alive[0]]
        win = tuple(k for k in keys if d(values[k], res) <= epsilon)
        return VoteResult(res, False, win, tuple(k for k in keys if k not in win))

    if algorithm == "consensus":
        ok = all(d(values[a], values[b]) <= epsilon
                 for i, a in enumerate(keys) for b in keys[i + 1:])
        return VoteResult(values[keys[0]], False, tuple(keys), ()) if ok else none

    groups = _clusters(keys, values, d, epsilon)
    if algorithm == "majority":
        win = next((g for g in groups if len(g) > n / 2), None)
    else:
        sizes = sorted((len(g) for g in groups), reverse=True)
        win = None
        if len(sizes) == 1 or sizes[0] > sizes[1]:
            win = max(groups, key=len)
    if win is None:
        return none
    return VoteResult(values[win[0]], False, tuple(win), tuple(k for k in keys if k not in win))


def exchange_schedule_length(voters: int, kind: str = PIPELINED) -> int:
    """Steps of one all-to-all exchange among ``voters`` processes."""
    return len(simulate_run(voters - 1, kind).nu)


@dataclass(frozen=True)
class VoterConfig:
    members: tuple[int, ...]
    spares: tuple[int, ...] = ()
    algorithm: str = "majority"
    metric: str = "bitwise"
    epsilon: float = 0.0
    scaling: float = 1.0
    timeout: int = DEFAULT_TIMEOUT
    on_success: int | None = None
    on_error: int | None = None

    def __post_init__(self):
        if len(self.members) < 2:
            raise ConfigError("a voting session needs at least two members")
        if len(set(self.members)) != len(self.members):
            raise ConfigError("duplicate member")
        if set(self.members) & set(self.spares):
            raise ConfigError("a task cannot be both version and spare")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        metric(self.metric)
        if self.epsilon < 0 or self.timeout <= 0:
            raise ConfigError("need epsilon >= 0 and a positive timeout")

    @classmethod
    def from_nversion(cls, nv, task_ids=None) -> "VoterConfig":
        if task_ids is not None:
            for v in nv.versions:
                if v.task not in task_ids:
                    raise ConfigError(f"version {v.rank}: task {v.task} is not declared")
        timeouts = [v.timeout for v in nv.versions if v.timeout]
        # a metric the registry does not know (a user C routine) falls back to bitwise
        name = (nv.metric or "bitwise").lower()
        name = name if name in METRICS else "bitwise"
        return cls(tuple(nv.members), tuple(nv.spares), nv.algorithm, name,
                   timeout=max(timeouts) if timeouts else DEFAULT_TIMEOUT,
                   on_success=nv.on_success, on_error=nv.on_error)


class VotingHost(Protocol):
    def now(self) -> int: ...
    def post(self, src_uid: int, dst_uid: int, payload) -> None: ...
    def timer(self, uid: int, duration: int, fn) -> None: ...
    def raise_events(self, uid: int, notifications: list[Notification]) -> None: ...
    def take_corruption(self, uid: int, value): ...
    def log(self, uid: int, event: str, details: str) -> None: ...


@dataclass
class _Round:
    values: dict = field(default_factory=dict)
    voted: bool = False


class VotingSession:
    """All voters of one N-version unit.  Each member's handler only reads
    its own per-member state; the shared fields are the slot table, which
    models the configuration every voter keeps."""

    def __init__(self, nv_id: int, cfg: VoterConfig, host: VotingHost,
                 version_fn: Callable[[int, Any], Any] | None = None,
                 wakeup: int | None = None, schedule: str = PIPELINED):
        self.nv_id = nv_id
        self.cfg = cfg
        self.host = host
        self.version_fn = version_fn or (lambda uid, x: x)
        self.wakeup = wakeup
        self.schedule = schedule
        self.slots: list[int] = list(cfg.members)
        self.idle_spares: list[int] = list(cfg.spares)
        self.phase: dict[int, int] = {u: PHASE_IDLE for u in (*cfg.members, *cfg.spares)}
        self.rounds: dict[int, dict[int, _Round]] = {u: {} for u in self.phase}
        self.woken: dict[int, bool] = {}
        self.absent_reported: set[int] = set()
        self.results: list[tuple[int, Any]] = []
        self.errors: list[tuple[int, str]] = []
        self.reconfigurations: list[tuple[int, int]] = []

    @property
    def voters(self) -> list[int]:
        return list(self.slots)

    def handles(self, uid: int) -> bool:
        return uid in self.phase

    # -- client side

    def request(self, client: int, rnd: int, value) -> None:
        self.host.log(client, "request", f"round {rnd} to nversion {self.nv_id}")
        for m in self.slots:
            self.host.post(client, m, ("request", rnd, value))

    # -- voter side

    def on_message(self, uid: int, payload) -> None:
        if isinstance(payload, int):
            self._control(uid, payload)
            return
        kind = payload[0]
        if kind == "request":
            self._start_round(uid, payload[1], payload[2])
        elif kind == "value":
            _, rnd, sender, v = payload
            r = self.rounds[uid].setdefault(rnd, _Round())
            if not r.voted and sender in self.slots:
                r.values[sender] = v
                self._maybe_vote(uid, rnd)

    def _start_round(self, uid: int, rnd: int, x) -> None:
        if uid not in self.slots:
            return
        r = self.rounds[uid].setdefault(rnd, _Round())
        if r.voted or uid in r.values:
            return
        out = self.host.take_corruption(uid, self.version_fn(uid, x))
        r.values[uid] = out
        self.phase[uid] = PHASE_EXCHANGING
        i = self.slots.index(uid)
        for j in build_permutation(i, len(self.slots) - 1, self.schedule):
            self.host.post(uid, self.slots[j], ("value", rnd, uid, out))
        self.host.timer(uid, self.cfg.timeout, lambda: self._timeout(uid, rnd))
        self._maybe_vote(uid, rnd)

    def _timeout(self, uid: int, rnd: int) -> None:
        r = self.rounds[uid].get(rnd)
        if r is not None and not r.voted:
            self._vote(uid, rnd)

    def _maybe_vote(self, uid: int, rnd: int) -> None:
        r = self.rounds[uid][rnd]
        if uid in r.values and all(m in r.values for m in self.slots):
            self._vote(uid, rnd)

    def _vote(self, uid: int, rnd: int) -> None:
        r = self.rounds[uid][rnd]
        r.voted = True
        if self.phase[uid] != PHASE_FAILED:
            self.phase[uid] = PHASE_VOTED
        present = {m: r.values[m] for m in self.slots if m in r.values}
        absent = [m for m in self.slots if m not in r.values]
        if len(present) >= 2:
            res = vote(present, self.cfg.algorithm, self.cfg.metric, self.cfg.epsilon,
                       self.cfg.scaling, n=len(self.slots), order=self.slots)
        else:
            res = VoteResult(NO_CONSENSUS, True)
        if res.no_consensus:
            reporter = min(present, key=self.slots.index)
        else:
            reporter = min(res.winners, key=self.slots.index)
        self.rounds[uid].pop(rnd - 8, None)        # keep a short history only
        if uid != reporter:
            return
        notes = []
        for m in res.minority:
            notes.append(Notification(VALUE_FAULT, TASK, m, (rnd,), label=rnd,
                                      sim_time=self.host.now()))
            notes.append(Notification(PHASE_SET, TASK, m, (PHASE_FAILED,),
                                      sim_time=self.host.now()))
            self.phase[m] = PHASE_FAILED
        for m in absent:
            if m not in self.absent_reported:
                self.absent_reported.add(m)
                notes.append(Notification(DEADLINE_MISSED, TASK, m, (rnd,),
                                          sim_time=self.host.now()))
        self.absent_reported -= set(present)
        if res.minority or absent:
            self.host.log(uid, "vote", f"round {rnd}: minority {list(res.minority)} "
                                       f"absent {absent}")
        if notes:
            self.host.raise_events(uid, notes)
        if res.no_consensus:
            self.errors.append((rnd, NO_CONSENSUS))
            self.host.log(uid, "no-consensus", f"round {rnd}")
            if self.cfg.on_error is not None:
                self.host.post(uid, self.cfg.on_error, ("error", rnd, NO_CONSENSUS))
        else:
            self.results.append((rnd, res.value))
            self.host.log(uid, "voted", f"round {rnd}: {res.value!r}")
            if self.cfg.on_success is not None:
                self.host.post(uid, self.cfg.on_success, ("result", rnd, res.value))

    # -- reconfiguration

    def _control(self, uid: int, value: int) -> None:
        if uid in self.cfg.spares and uid in self.idle_spares:
            if not self.woken.get(uid) and (self.wakeup is None or value == self.wakeup):
                self.woken[uid] = True
                self.host.log(uid, "wakeup", "spare woken")
                return
            if self.woken.get(uid):
                self.reconfigure(value, uid)
            return
        if value == self.wakeup:
            # a wake-up reaching an active voter: no idle spare is left
            self.exhausted(uid)
        else:
            self.host.log(uid, "ack", f"control value {value}")

    def reconfigure(self, old: int, spare: int) -> bool:
        if spare not in self.idle_spares:
            self.exhausted(spare)
            return False
        if old not in self.slots:
            self.host.log(spare, "reconfigure-failed", f"task {old} is not a voter")
            return False
        self.slots[self.slots.index(old)] = spare
        self.idle_spares.remove(spare)
        self.woken.pop(spare, None)
        self.phase[spare] = PHASE_IDLE
        self.absent_reported.discard(old)
        self.reconfigurations.append((old, spare))
        self.host.log(spare, "reconfigure", f"replaces task {old}")
        return True

    def exhausted(self, uid: int) -> None:
        self.errors.append((-1, "redundancy exhausted"))
        self.host.log(uid, "exhausted", "no idle spare left")
        if self.cfg.on_error is not None:
            self.host.post(uid, self.cfg.on_error, ("error", -1, "redundancy exhausted"))


def pack_int(v: int) -> bytes:
    """64-bit payload for the numeric metric."""
    return struct.pack("<q", v)
