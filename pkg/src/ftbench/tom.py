"""Time-out manager.

Entries sit in one list ordered by expiry.  Each entry stores only the
time remaining after its predecessor expires (``running``); the head's
value is relative to ``starting_time``.  The residual time of entry n is

    r_1 = running_1 - (now - starting_time)
    r_n = r_1 + running_2 + ... + running_n

so only the head needs to be looked at by the periodic scan.

Alarms are handed to an ``AlarmScheduler`` that models a pool of ``tau``
execution workers in simulated time.
"""

from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass, field
from typing import Any, Callable

TOM_CYCLE = 50_000


class TomError(KeyError):
    pass


@dataclass
class TimeoutEntry:
    id: int
    deadline: int
    cyclic: bool = False
    enabled: bool = True
    alarm: Callable[..., Any] | None = None
    running: int = 0
    # payload for the alarm scheduler: simulated run time and competition tag
    duration: int = 0
    mode: str = "wait"


@dataclass
class Fired:
    entry: TimeoutEntry
    expected: int   # absolute expiry time
    scanned: int    # time of the scan that noticed it


class TimeoutList:
    def __init__(self):
        self.starting_time = 0
        self.entries: list[TimeoutEntry] = []
        self._ids: dict[int, TimeoutEntry] = {}

    def __len__(self):
        return len(self.entries)

    def __contains__(self, entry_id):
        return entry_id in self._ids

    def get(self, entry_id: int) -> TimeoutEntry:
        try:
            return self._ids[entry_id]
        except KeyError:
            raise TomError(f"no time-out with id {entry_id}") from None

    def residuals(self, now: int) -> list[int]:
        out = []
        acc = -(now - self.starting_time)
        for e in self.entries:
            acc += e.running
            out.append(acc)
        return out

    def residual(self, entry_id: int, now: int) -> int:
        self.get(entry_id)
        for e, r in zip(self.entries, self.residuals(now)):
            if e.id == entry_id:
                return r
        raise AssertionError("index out of sync")

    def insert(self, entry: TimeoutEntry, now: int) -> None:
        if entry.deadline <= 0:
            raise ValueError("deadline must be positive")
        self._place(entry, entry.deadline, now)

    def _place(self, entry: TimeoutEntry, residual: int, now: int) -> None:
        if entry.id in self._ids:
            raise TomError(f"duplicate time-out id {entry.id}")
        self._ids[entry.id] = entry
        if not self.entries:
            self.starting_time = now
            entry.running = residual
            self.entries.append(entry)
            return
        res = self.residuals(now)
        if residual < res[0]:
            head = self.entries[0]
            entry.running = residual + now - self.starting_time
            head.running = res[0] - residual
            self.entries.insert(0, entry)
            return
        # last j with r_j <= residual; equal residuals keep FIFO order
        j = len(res) - 1
        while res[j] > residual:
            j -= 1
        entry.running = residual - res[j]
        if j + 1 < len(self.entries):
            self.entries[j + 1].running -= entry.running
        self.entries.insert(j + 1, entry)

    def delete(self, entry_id: int, now: int) -> TimeoutEntry:
        entry = self.get(entry_id)
        k = self.entries.index(entry)
        if k + 1 < len(self.entries):
            self.entries[k + 1].running += entry.running
        del self.entries[k]
        del self._ids[entry_id]
        return entry

    def scan(self, now: int) -> list[Fired]:
        """Fire every entry whose residual is strictly negative."""
        if not self.entries:
            return []
        res = self.residuals(now)
        if res[0] >= 0:
            return []
        j = 0
        while j + 1 < len(res) and res[j + 1] < 0:
            j += 1
        fired = [Fired(e, now + r, now) for e, r in zip(self.entries[:j + 1], res[:j + 1])]
        rest = self.entries[j + 1:]
        for f in fired:
            del self._ids[f.entry.id]
        self.entries = rest
        if rest:
            rest[0].running += res[j]
            self.starting_time = now
        for f in fired:
            if f.entry.cyclic:
                # renewal anchored to the scheduled expiry, not the scan
                self._place(f.entry, f.expected + f.entry.deadline - now, now)
        for f in fired:
            if f.entry.enabled and f.entry.alarm is not None:
                f.entry.alarm(f)
        return fired

    def control(self, entry_id: int, cmd: str, now: int, value: Any = None) -> None:
        entry = self.get(entry_id)
        if cmd == "enable":
            entry.enabled = True
        elif cmd == "disable":
            entry.enabled = False
        elif cmd == "renew":
            self.delete(entry_id, now)
            self.insert(entry, now)
        elif cmd == "set_deadline":
            if value is None or value <= 0:
                raise ValueError("set_deadline needs a positive deadline")
            self.delete(entry_id, now)
            entry.deadline = int(value)
            self.insert(entry, now)
        elif cmd == "set_action":
            entry.alarm = value
        else:
            raise ValueError(f"unknown control command {cmd!r}")

    def next_expiry(self) -> int | None:
        """Absolute expiry time of the head, if any."""
        if not self.entries:
            return None
        return self.starting_time + self.entries[0].running


@dataclass
class AlarmStat:
    alarm_id: int
    expected: int
    actual: int
    cycle: int

    @property
    def delta(self) -> int:
        return self.actual - self.expected

    @property
    def violated(self) -> bool:
        return self.delta > self.cycle


@dataclass
class AlarmScheduler:
    """Pool of ``tau`` alarm workers in simulated time.

    With ``tau == 0`` the scanner runs alarms itself, one after the other.
    Wait-bound alarms only occupy their worker; cpu-bound alarms also
    serialise on the single processor, which the scanner shares.
    """

    tau: int
    cycle: int = TOM_CYCLE
    busy_until: list[int] = field(default_factory=list)
    cpu_free: int = 0
    stats: list[AlarmStat] = field(default_factory=list)
    _next: int = 0

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        self.busy_until = [0] * self.tau

    def _pick_worker(self, now: int) -> int:
        # first free worker in circular order, else the one freed earliest
        for k in range(self.tau):
            w = (self._next + k) % self.tau
            if self.busy_until[w] <= now:
                self._next = (w + 1) % self.tau
                return w
        w = min(range(self.tau), key=lambda i: (self.busy_until[i], i))
        self._next = (w + 1) % self.tau
        return w

    def dispatch(self, fired: list[Fired], now: int) -> int:
        """Start every fired alarm; return the time the scanner is free."""
        scanner_free = now
        for f in fired:
            if not f.entry.enabled:
                continue
            dur = f.entry.duration
            cpu = f.entry.mode == "cpu"
            if self.tau == 0:
                start = max(scanner_free, self.cpu_free if cpu else now)
                end = start + dur
                scanner_free = end
                if cpu:
                    self.cpu_free = end
            else:
                w = self._pick_worker(now)
                start = max(now, self.busy_until[w])
                if cpu:
                    start = max(start, self.cpu_free)
                    self.cpu_free = start + dur
                    scanner_free = max(scanner_free, self.cpu_free)
                self.busy_until[w] = start + dur
            self.stats.append(AlarmStat(f.entry.id, f.expected, start, self.cycle))
        return scanner_free

    @property
    def violations(self) -> int:
        return sum(1 for s in self.stats if s.violated)

    def stats_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alarm_id", "expected", "actual", "delta", "violated"])
        for s in self.stats:
            w.writerow([s.alarm_id, s.expected, s.actual, s.delta, int(s.violated)])
        return buf.getvalue()


def run_benchmark(timeouts: int = 1000, horizon: int = 100_000_000,
                  duration: int = 20_000, tau: int = 0, mode: str = "wait",
                  cycle: int = TOM_CYCLE, seed: int = 0) -> AlarmScheduler:
    """Insert ``timeouts`` non-cyclic entries with deadlines uniform in
    ]0, horizon] at time 0, then scan every ``cycle`` ticks until all fired.

    A scan that finds the scanner still busy is deferred until it is free;
    the next scan is due one cycle after the one that actually ran.
    """
    if mode not in ("wait", "cpu"):
        raise ValueError("mode must be 'wait' or 'cpu'")
    rng = random.Random(seed)
    tl = TimeoutList()
    for k in range(timeouts):
        tl.insert(TimeoutEntry(k, rng.randint(1, horizon), duration=duration, mode=mode), 0)
    sched = AlarmScheduler(tau, cycle)
    t = 0
    while tl.entries:
        nxt = tl.next_expiry()
        if nxt is not None and nxt >= t + cycle:
            # nothing can fire before this scan slot; jump over idle cycles
            t += ((nxt - t) // cycle) * cycle
        fired = tl.scan(t)
        free = sched.dispatch(fired, t)
        t = max(t + cycle, free)
    return sched
