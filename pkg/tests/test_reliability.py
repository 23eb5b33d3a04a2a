import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ftbench import reliability as r
from ftbench.reliability import ReliabilityParams as P


def bisect(f, lo, hi, tol=1e-12):
    # plain bisection kept separate from the module's own root finder
    flo = f(lo)
    for _ in range(200):
        mid = (lo + hi) / 2
        if (f(mid) > 0) == (flo > 0):
            lo, flo = mid, f(mid)
        else:
            hi = mid
        if hi - lo < tol:
            break
    return (lo + hi) / 2


def test_params_validation():
    with pytest.raises(ValueError):
        P(0.0)
    with pytest.raises(ValueError):
        P(1.0, coverage_C=1.5)
    with pytest.raises(ValueError):
        P(1.0, recover_R=-0.1)


def test_simplex_and_tmr():
    p = P(0.5)
    assert r.evaluate("simplex", p, 2.0) == pytest.approx(math.exp(-1.0))
    t = -math.log(0.5) / 0.5
    assert r.evaluate("tmr", p, t) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        r.evaluate("tmr", p, -1.0)
    with pytest.raises(ValueError):
        r.evaluate("quad", p, 1.0)


def test_tmr_crosspoint_is_half():
    x = r.crosspoint("tmr_vs_simplex")
    assert abs(r.tmr_of(x) - x) < 1e-9
    assert x == 0.5


def test_spare_crosspoint():
    x = r.crosspoint("tmr_spare_vs_simplex", P(1.0, coverage_C=1.0))
    assert x == pytest.approx(0.2324, abs=5e-4)
    assert abs(r.tmr_spare_of(x, 1.0) - x) < 1e-8
    # dual route: the same root from the polynomial's own roots
    from numpy.polynomial import Polynomial as Poly
    rel = Poly([0, 1])
    f = 3 * (rel * (1 - rel)) ** 2 + 3 * rel ** 2 - 2 * rel ** 3 - rel
    inner = [z.real for z in f.roots() if abs(z.imag) < 1e-12 and 0.01 < z.real < 0.5]
    assert x == pytest.approx(inner[0], abs=1e-7)


def test_alpha_crosspoint_closed_form():
    p = P(1.0, transient_T=0.5, recover_R=0.6)
    x = r.crosspoint("tmr_alpha_vs_simplex", p)
    assert x == pytest.approx(0.5 ** (1 / 0.7))
    assert x == pytest.approx(0.3715, abs=1e-4)
    # the closed form is where the alpha-count curve meets exp(-(1-RT) l t)
    k = 0.7
    other = bisect(lambda v: 3 * v ** (2 * k) - 2 * v ** (3 * k) - v ** k, 1e-9, 0.99)
    assert other == pytest.approx(x, abs=1e-8)


def test_alpha_crosspoint_against_simplex_differs():
    p = P(1.0, transient_T=0.5, recover_R=0.6)
    k = 0.7
    x = r.crosspoint_alpha_bisect(p)
    ours = bisect(lambda v: 3 * v ** (2 * k) - 2 * v ** (3 * k) - v, 1e-9, 0.99)
    assert x == pytest.approx(ours, abs=1e-8)
    assert abs(x - r.crosspoint("tmr_alpha_vs_simplex", p)) > 0.1


def test_alpha_crosspoint_degenerate_cases():
    assert r.crosspoint("tmr_alpha_vs_simplex", P(1.0)) == 0.5
    with pytest.raises(ValueError):
        r.crosspoint("tmr_alpha_vs_simplex", P(1.0, transient_T=1.0, recover_R=1.0))
    with pytest.raises(ValueError):
        r.crosspoint("tmr_spare_vs_simplex")
    with pytest.raises(ValueError):
        r.crosspoint("nope", P(1.0))


def test_alpha_with_zero_rt_is_tmr():
    t = np.linspace(0, 5, 40)
    assert np.allclose(r.evaluate("tmr_alpha", P(1.0), t), r.evaluate("tmr", P(1.0), t),
                       atol=1e-15)


@given(st.floats(0.01, 10.0), st.floats(0, 1), st.floats(0, 1))
def test_laplace_form_agrees(lam, rr, tt):
    p = P(lam, transient_T=tt, recover_R=rr)
    t = np.linspace(0, 5 / lam, 20)
    assert np.allclose(r.evaluate("tmr_alpha", p, t), r.tmr_alpha_laplace(p, t),
                       atol=1e-12, rtol=0)


@pytest.mark.parametrize("c", [0.0, 0.3, 0.9, 1.0])
def test_spare_chain_matches_closed_form(c):
    p = P(0.7, coverage_C=c)
    t = np.linspace(0, 5 / 0.7, 60)
    chain = r.tmr_spare_chain(p)
    sol = r.markov_solve(chain, t)
    total = sum(cv.values for cv in sol.values())
    assert np.max(np.abs(total - 1)) < 1e-9
    got = r.useful_probability(chain, sol)
    assert np.max(np.abs(got - r.evaluate("tmr_spare", p, t))) < 1e-6


@pytest.mark.parametrize("rr,tt", [(0, 0), (0.6, 0.5), (0.9, 0.9)])
def test_alpha_chain_matches_closed_form(rr, tt):
    p = P(2.0, transient_T=tt, recover_R=rr)
    t = np.linspace(0, 5 / 2.0, 60)
    chain = r.tmr_alpha_chain(p)
    got = r.useful_probability(chain, r.markov_solve(chain, t))
    assert np.max(np.abs(got - r.evaluate("tmr_alpha", p, t))) < 1e-6


def test_markov_initial_condition_and_errors():
    chain = r.tmr_spare_chain(P(1.0))
    sol = r.markov_solve(chain, [0.0])
    assert [sol[s].values[0] for s in chain.states] == [1.0] + [0.0] * 8
    with pytest.raises(ValueError):
        r.markov_solve(chain, [1.0, 0.5])
    bad = r.MarkovChain(["a", "b"], np.array([[-1.0, 2.0], [0.0, 0.0]]), "a", ["a"])
    with pytest.raises(ValueError):
        r.markov_solve(bad, [0.0, 1.0])
    neg = r.MarkovChain(["a", "b"], np.array([[0.0, -2.0], [0.0, 0.0]]), "a", ["a"])
    with pytest.raises(ValueError):
        r.markov_solve(neg, [0.0, 1.0])


def test_dominance_grid():
    rs = np.linspace(0, 1, 100)
    for c in np.linspace(0.01, 1, 100):
        assert np.all(r.tmr_spare_of(rs, c) >= r.tmr_of(rs) - 1e-15)


@given(st.floats(0.01, 0.99), st.floats(0.01, 1.0))
def test_alpha_never_worse_than_tmr(rt, lam):
    p = P(lam, transient_T=1.0, recover_R=rt)
    t = np.linspace(0, 10 / lam, 50)
    assert np.all(r.evaluate("tmr_alpha", p, t) >= r.evaluate("tmr", p, t) - 1e-12)


def test_curves_csv():
    text = r.curves_csv([0.0, 1.0], {"a": np.array([1.0, 0.5])})
    assert text.splitlines() == ["t,a", "0,1.000000000000", "1,0.500000000000"]
