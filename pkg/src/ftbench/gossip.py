"""Discrete-time model of all-to-all gossiping among N+1 processors.

Every processor ``i`` runs the same automaton: ``i`` receives from any
sender, then ``N`` sends ordered by its permutation, then ``N - i`` more
receives.  At each step senders offer one message to their next target;
a target accepts when it sits in a receive state, and among competing
offers the lowest sender id wins.  A processor performs at most one action
per step.

The run table records one cell per processor per step, and ``nu[t]`` is
the number of slots used at step ``t`` (always even: a send plus its
matching receive).
"""

from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numba import njit

IDENTITY = "identity"
PSEUDO_RANDOM = "pseudo_random"
PIPELINED = "pipelined"
KINDS = (IDENTITY, PSEUDO_RANDOM, PIPELINED)

# cell codes; values >= 0 are S(j) with j = code, -(j+1) is R(j)
WAIT_RECV = -1_000_000
WAIT_SEND = -1_000_001
IDLE = -1_000_002

_PRE, _SEND, _POST, _DONE = 0, 1, 2, 3


class GossipModelError(RuntimeError):
    """Raised when a run stops making progress with work still pending."""


@dataclass(frozen=True)
class PermutationSpec:
    kind: str = IDENTITY
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown permutation kind {self.kind!r}")


def build_permutation(i: int, n: int, spec: PermutationSpec | str) -> list[int]:
    """Send order of processor ``i`` among processors ``0..n``."""
    if isinstance(spec, str):
        spec = PermutationSpec(spec)
    if not 0 <= i <= n:
        raise ValueError(f"processor {i} outside [0, {n}]")
    if spec.kind == IDENTITY:
        return [j for j in range(n + 1) if j != i]
    if spec.kind == PIPELINED:
        return [(i + k) % (n + 1) for k in range(1, n + 1)]
    order = [j for j in range(n + 1) if j != i]
    random.Random(spec.seed * 1_000_003 + i).shuffle(order)
    return order


@njit(cache=True)
def _kernel(n, perms, sessions, record):
    p = n + 1
    phase = np.zeros(p, np.int64)
    count = np.zeros(p, np.int64)
    sess = np.zeros(p, np.int64)
    got = np.zeros((p, p), np.bool_)
    taken = np.empty(p, np.int64)
    pair_s = np.empty(p, np.int64)
    pair_r = np.empty(p, np.int64)
    for i in range(p):
        phase[i] = _PRE if i > 0 else _SEND

    cap = 64
    nu = np.zeros(cap, np.int64)
    cells = np.zeros((p, cap if record else 1), np.int64)
    done_at = np.full((p, sessions), -1, np.int64)
    finished = np.zeros(p, np.bool_)
    remaining = p
    t = 0
    while remaining > 0:
        if t == cap:
            cap *= 2
            nu2 = np.zeros(cap, np.int64)
            nu2[:t] = nu[:t]
            nu = nu2
            if record:
                c2 = np.zeros((p, cap), np.int64)
                c2[:, :t] = cells[:, :t]
                cells = c2
        for r in range(p):
            taken[r] = -1
        m = 0
        for s in range(p):
            if phase[s] != _SEND:
                continue
            r = perms[s, count[s]]
            pr = phase[r]
            if (pr == _PRE or pr == _POST) and taken[r] < 0 \
                    and sess[r] == sess[s] and not got[r, s]:
                taken[r] = s
                pair_s[m] = s
                pair_r[m] = r
                m += 1
        if m == 0:
            return nu[:0], cells[:, :0], done_at, False
        nu[t] = 2 * m
        if record:
            for i in range(p):
                if phase[i] == _SEND:
                    cells[i, t] = WAIT_SEND
                elif phase[i] == _DONE:
                    cells[i, t] = IDLE
                else:
                    cells[i, t] = WAIT_RECV
            for k in range(m):
                cells[pair_s[k], t] = perms[pair_s[k], count[pair_s[k]]]
                cells[pair_r[k], t] = -(pair_s[k] + 1)
        for k in range(m):
            s = pair_s[k]
            r = pair_r[k]
            got[r, s] = True
            count[s] += 1
            if count[s] == n:
                count[s] = 0
                phase[s] = _POST if s < n else _DONE
            count[r] += 1
            if phase[r] == _PRE and count[r] == r:
                count[r] = 0
                phase[r] = _SEND
                if r == n:
                    done_at[r, sess[r]] = t
            elif phase[r] == _POST and count[r] == n - r:
                count[r] = 0
                phase[r] = _DONE
                done_at[r, sess[r]] = t
        for i in range(p):
            if phase[i] == _DONE and not finished[i]:
                if sess[i] + 1 < sessions:
                    sess[i] += 1
                    for j in range(p):
                        got[i, j] = False
                    phase[i] = _PRE if i > 0 else _SEND
                else:
                    finished[i] = True
                    remaining -= 1
        t += 1
    return nu[:t], cells[:, :t], done_at, True


@dataclass
class RunTable:
    n: int
    spec: PermutationSpec
    sessions: int
    nu: np.ndarray
    cells: np.ndarray | None
    # step at which processor i obtained its last foreign value of session s
    completed: np.ndarray

    @property
    def length(self) -> int:
        return int(self.nu.shape[0])

    def nu_list(self) -> list[int]:
        return [int(v) for v in self.nu]

    def dump(self) -> str:
        """Text grid: one row per processor plus a final row of nu."""
        if self.cells is None:
            raise ValueError("run was simulated without recording cells")
        width = max(4, len(str(self.n)) + 2)
        out = []
        header = " " * 4 + "".join(f"{t + 1:>{width}}" for t in range(self.length))
        out.append(header)
        for i in range(self.n + 1):
            row = [_cell_text(int(c)) for c in self.cells[i]]
            out.append(f"{i:>3} " + "".join(f"{c:>{width}}" for c in row))
        out.append(" " * 4 + "".join(f"{v:>{width}}" for v in self.nu_list()))
        return "\n".join(out) + "\n"


def _cell_text(code: int) -> str:
    if code == WAIT_RECV:
        return "wr"
    if code == WAIT_SEND:
        return "ws"
    if code == IDLE:
        return "."
    if code >= 0:
        return f"S{code}"
    return f"R{-code - 1}"


def simulate_run(n: int, spec: PermutationSpec | str = IDENTITY,
                 sessions: int = 1, record: bool = False) -> RunTable:
    if isinstance(spec, str):
        spec = PermutationSpec(spec)
    if n < 1:
        raise ValueError("need at least two processors (N >= 1)")
    if sessions < 1:
        raise ValueError("sessions must be >= 1")
    perms = np.array([build_permutation(i, n, spec) for i in range(n + 1)],
                     dtype=np.int64)
    nu, cells, done_at, ok = _kernel(n, perms, sessions, record)
    if not ok:
        raise GossipModelError(f"deadlock in gossip run N={n} {spec.kind}")
    return RunTable(n, spec, sessions, nu.copy(),
                    cells.copy() if record else None, done_at.copy())


@dataclass(frozen=True)
class RunMetrics:
    lambda_: int
    used: int
    u4: int
    n: int

    @property
    def sigma(self) -> int:
        return (self.n + 1) * self.lambda_

    @property
    def mu(self) -> Fraction:
        return Fraction(self.used, self.lambda_)

    @property
    def epsilon(self) -> Fraction:
        return Fraction(self.used, self.sigma)


def metrics(table: RunTable) -> RunMetrics:
    nu = table.nu
    return RunMetrics(lambda_=table.length, used=int(nu.sum()),
                      u4=int((nu == 4).sum()), n=table.n)


def closed_forms(n: int, kind: str) -> RunMetrics:
    """Predicted metrics for the identity and pipelined permutations."""
    if kind == IDENTITY:
        lam = (3 * n * n + 5 * n + 2 * (n // 2)) // 4
        u4 = (n * n - 2 * n + (n % 2)) // 4
        used = (n * n - 2 * n + (n % 2)) // 2 + 2 * lam
        return RunMetrics(lam, used, u4, n)
    if kind == PIPELINED:
        lam = 3 * n
        used = 2 * n * (n + 1)
        # for pipelined runs u4 is whatever the run shows; it has no closed form
        return RunMetrics(lam, used, -1, n)
    raise ValueError(f"no closed form for permutation kind {kind!r}")


def sustained_rate(table: RunTable, skip: int = 2) -> float:
    """Completions per step between the end of session ``skip`` and the
    start of the last ``skip`` sessions.  Each completion is one processor
    holding a full set of values."""
    done = table.completed
    if table.sessions <= 2 * skip + 1:
        raise ValueError("not enough sessions for a sustained region")
    lo = int(done[:, skip].max())
    hi = int(done[:, table.sessions - skip - 1].max())
    inside = int(((done > lo) & (done <= hi)).sum())
    return inside / (hi - lo)


def sustained_efficiency(table: RunTable, skip: int = 2) -> Fraction:
    done = table.completed
    lo = int(done[:, skip].max()) + 1
    hi = int(done[:, table.sessions - skip - 1].max()) + 1
    window = table.nu[lo:hi]
    return Fraction(int(window.sum()), (table.n + 1) * len(window))


def metrics_csv(rows: list[tuple[int, str, RunMetrics]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "kind", "lambda", "mu", "epsilon", "u4"])
    for n, kind, m in rows:
        w.writerow([n, kind, m.lambda_, f"{float(m.mu):.6f}",
                    f"{float(m.epsilon):.6f}", m.u4])
    return buf.getvalue()
