"""Reliability of simplex, TMR, TMR with one spare and TMR with an
alpha-count filter, plus a numeric Markov oracle.

Closed forms work on ``R = exp(-lambda t)``.  The oracle integrates the
forward equations ``p' = p Q`` of the built-in chains with a fixed-step
RK4 scheme and accepts a step size only when halving it moves no state
probability by more than ``tol``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

MODELS = ("simplex", "tmr", "tmr_spare", "tmr_alpha")


@dataclass(frozen=True)
class ReliabilityParams:
    lambda_fail: float
    coverage_C: float = 1.0
    transient_T: float = 0.0
    recover_R: float = 0.0

    def __post_init__(self):
        if not self.lambda_fail > 0:
            raise ValueError("lambda_fail must be positive")
        for name in ("coverage_C", "transient_T", "recover_R"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @property
    def rt(self) -> float:
        return self.recover_R * self.transient_T


def tmr_of(r):
    return 3 * r**2 - 2 * r**3


def tmr_spare_of(r, c):
    return (-3 * c**2 + 6 * c) * (r * (1 - r)) ** 2 + tmr_of(r)


def evaluate(model: str, params: ReliabilityParams, t):
    """Reliability of ``model`` at time ``t`` (scalar or array)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    lam = params.lambda_fail
    r = np.exp(-lam * t)
    if model == "simplex":
        out = r
    elif model == "tmr":
        out = tmr_of(r)
    elif model == "tmr_spare":
        out = tmr_spare_of(r, params.coverage_C)
    elif model == "tmr_alpha":
        k = 1.0 - params.rt
        out = 3 * np.exp(-2 * k * lam * t) - 2 * np.exp(-3 * k * lam * t)
    else:
        raise ValueError(f"unknown model {model!r}")
    return out if out.ndim else float(out)


def tmr_alpha_laplace(params: ReliabilityParams, t):
    """TMR with alpha-count written through R(t): 3 R^(2k) - 2 R^(3k)."""
    r = np.exp(-params.lambda_fail * np.asarray(t, dtype=float))
    k = 1.0 - params.rt
    return 3 * r ** (2 * k) - 2 * r ** (3 * k)


def _bisect(f, lo, hi, tol=1e-9):
    flo = f(lo)
    if flo * f(hi) > 0:
        raise ValueError("no sign change on bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def crosspoint(pair: str, params: ReliabilityParams | None = None) -> float:
    """Value of R(t) at which the redundant scheme stops beating simplex."""
    if pair == "tmr_vs_simplex":
        return 0.5
    if params is None:
        raise ValueError(f"{pair} needs parameters")
    if pair == "tmr_spare_vs_simplex":
        c = params.coverage_C
        # f(R) = R1(R) - R has roots at 0 and 1; the interior root sits
        # below the TMR one, which is 0.5
        return _bisect(lambda r: tmr_spare_of(r, c) - r, 1e-6, 0.5)
    if pair == "tmr_alpha_vs_simplex":
        rt = params.rt
        if rt >= 1.0:
            raise ValueError("crosspoint undefined for R*T = 1")
        return 0.5 ** (1.0 / (1.0 - rt))
    raise ValueError(f"unknown pair {pair!r}")


def crosspoint_alpha_bisect(params: ReliabilityParams) -> float:
    """Root of ``3x^(2k) - 2x^(3k) = x`` with ``k = 1 - R*T``.

    This is where the alpha-count curve meets the simplex curve.  The
    closed form returned by ``crosspoint`` is instead where it meets
    ``x^k``; the two agree only for ``R*T = 0``.
    """
    k = 1.0 - params.rt
    if k <= 0:
        raise ValueError("crosspoint undefined for R*T = 1")
    # with x = R(t): 3 x^(2k) - 2 x^(3k) = x
    return _bisect(lambda x: 3 * x ** (2 * k) - 2 * x ** (3 * k) - x, 1e-9, 1 - 1e-12)


@dataclass
class MarkovChain:
    states: list[str]
    rates: np.ndarray
    initial: str
    useful: list[str]

    def generator(self) -> np.ndarray:
        q = np.array(self.rates, dtype=float)
        if q.shape != (len(self.states), len(self.states)):
            raise ValueError("rate matrix shape does not match states")
        off = q - np.diag(np.diag(q))
        if np.any(off < 0):
            raise ValueError("negative transition rate")
        np.fill_diagonal(q, -off.sum(axis=1))
        return q

    def check(self):
        q = np.array(self.rates, dtype=float)
        # an explicit diagonal must already balance its row
        if np.any(np.diag(q) != 0) and np.max(np.abs(q.sum(axis=1))) > 1e-12:
            raise ValueError("non-conservative generator")
        self.generator()


def tmr_spare_chain(params: ReliabilityParams) -> MarkovChain:
    """Nine-state chain of a TMR voter with one spare.

    State digits: working modules, spares, faulty-but-undetected modules.
    FS is the fail-safe absorbing state, FU the fail-unsafe one.
    """
    lam = params.lambda_fail
    c = params.coverage_C
    states = ["310", "300", "200", "FS", "211", "301", "201", "202", "FU"]
    idx = {s: k for k, s in enumerate(states)}
    q = np.zeros((9, 9))

    def arc(a, b, rate):
        q[idx[a], idx[b]] += rate

    arc("310", "300", 4 * lam * c)
    arc("310", "211", 3 * lam * (1 - c))
    arc("310", "301", lam * (1 - c))
    arc("300", "200", 3 * lam)
    arc("200", "FS", 2 * lam)
    arc("211", "201", 3 * lam * c)
    arc("211", "202", lam * (1 - c))
    arc("211", "FU", 2 * lam * (1 - c))
    arc("301", "201", 3 * lam * c)
    arc("301", "202", 3 * lam * (1 - c))
    arc("201", "FU", 2 * lam)
    arc("202", "FU", 2 * lam)
    useful = [s for s in states if s not in ("FS", "FU")]
    return MarkovChain(states, q, "310", useful)


def tmr_alpha_chain(params: ReliabilityParams) -> MarkovChain:
    """Three-state TMR chain where a fraction R*T of faults is recovered."""
    lam = params.lambda_fail * (1.0 - params.rt)
    states = ["3", "2", "F"]
    q = np.zeros((3, 3))
    q[0, 1] = 3 * lam
    q[1, 2] = 2 * lam
    return MarkovChain(states, q, "3", ["3", "2"])


def _rk4(q, p0, t_grid, steps_per_unit, mult):
    out = np.empty((len(t_grid), len(p0)))
    p = p0.copy()
    t = 0.0
    qt = q  # row vector convention: dp/dt = p @ q
    for k, target in enumerate(t_grid):
        span = target - t
        if span > 0:
            n = mult * max(1, int(math.ceil(span * steps_per_unit)))
            h = span / n
            for _ in range(n):
                k1 = p @ qt
                k2 = (p + 0.5 * h * k1) @ qt
                k3 = (p + 0.5 * h * k2) @ qt
                k4 = (p + h * k3) @ qt
                p = p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t = target
        out[k] = p
    return out


@dataclass
class Curve:
    t: np.ndarray
    values: np.ndarray


def markov_solve(chain: MarkovChain, t_grid, tol: float = 1e-8) -> dict[str, Curve]:
    """State probabilities of ``chain`` on ``t_grid`` (ascending, >= 0)."""
    chain.check()
    q = chain.generator()
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) < 0) or np.any(t_grid < 0):
        raise ValueError("t_grid must be ascending and non-negative")
    p0 = np.zeros(len(chain.states))
    p0[chain.states.index(chain.initial)] = 1.0
    density = 4.0 * (float(np.max(-np.diag(q))) or 1.0)
    mult = 1
    coarse = _rk4(q, p0, t_grid, density, mult)
    for _ in range(16):
        fine = _rk4(q, p0, t_grid, density, 2 * mult)
        if np.max(np.abs(fine - coarse)) < tol:
            coarse = fine
            break
        coarse, mult = fine, 2 * mult
    else:
        raise RuntimeError("step halving did not converge")
    return {s: Curve(t_grid, coarse[:, k]) for k, s in enumerate(chain.states)}


def useful_probability(chain: MarkovChain, curves: dict[str, Curve]) -> np.ndarray:
    return sum(curves[s].values for s in chain.useful)


def curves_csv(t, columns: dict[str, np.ndarray]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(columns)
    w.writerow(["t", *names])
    for k, tv in enumerate(np.asarray(t)):
        w.writerow([f"{tv:.9g}", *(f"{columns[n][k]:.12f}" for n in names)])
    return buf.getvalue()
