import pytest
from hypothesis import given, settings, strategies as st

from ftbench import model as m
from ftbench.lang.symbols import WatchdogConfig
from ftbench.simnet import (WATCHDOG_EXPIRED, LinkModel, Partition, ScenarioError,
                            Simulator, WatchdogActor, parse_scenario)
from ftbench.system import System

from conftest import compile_fixture


def echo_sim(seed=0, **link):
    sim = Simulator(4, seed, LinkModel(**link) if link else None)
    got = []
    return sim, got


# ---- scenario files

def test_parse_scenario_keys():
    sc = parse_scenario("""
# comment
seed 42
until 5000000
delay 2000 100
omission 0.25
partition 10 20 0,1|2,3
restart node 2 at 300
crash node 1 at 200
crash backbone 3 at 250
inject MFAULT component 5 at 70
heartbeat 4 to 9 every 100 from 10 until 900
vote 40 from 10 at 500 every 100 count 3
drift 1 1.01
verbose on
""")
    assert sc.seed == 42 and sc.until == 5_000_000
    assert (sc.link.delay, sc.link.jitter, sc.link.omission_p) == (2000, 100, 0.25)
    p = sc.link.partitions[0]
    assert (p.start, p.end, p.side_a, p.side_b) == (10, 20, {0, 1}, {2, 3})
    assert sc.restarts == [(2, 300)] and sc.crashes == [(1, 200)]
    assert sc.bb_crashes == [(3, 250)]
    inj = sc.injections[0]
    assert (inj.fault, inj.what, inj.target, inj.after) == ("MFAULT", "COMPONENT", 5, 70)
    assert sc.heartbeats == [(4, 9, 100, 10, 900)]
    assert sc.votes == [(40, 500, 100, 3, 10)]
    assert sc.drift == {1: 1.01} and sc.verbose


@pytest.mark.parametrize("text, line", [
    ("seed x", 1), ("\nfrobnicate 3", 2), ("partition 1 2 0,1", 1),
    ("heartbeat 1 at 2 every 3", 1), ("delay 10 20", 1), ("omission 2", 1),
])
def test_parse_scenario_errors(text, line):
    with pytest.raises(ScenarioError) as e:
        parse_scenario(text)
    if "frob" in text or "seed" in text:
        assert e.value.line == line


def test_link_model_validation():
    with pytest.raises(ValueError):
        LinkModel(0)
    with pytest.raises(ValueError):
        LinkModel(100, 100)


def test_partition_window():
    p = Partition(10, 20, frozenset({0}), frozenset({1}))
    assert p.separates(0, 1, 10) and p.separates(1, 0, 19)
    assert not p.separates(0, 1, 20) and not p.separates(0, 2, 15)


# ---- event loop

def test_empty_run_has_empty_trace():
    sim = Simulator(2)
    assert sim.run_until(1_000_000) == []
    assert sim.now == 1_000_000


def test_events_in_time_then_insertion_order():
    sim = Simulator(1)
    order = []
    sim.at(5, order.append, "b")
    sim.at(3, order.append, "a")
    sim.at(5, order.append, "c")
    sim.run_until(10)
    assert order == ["a", "b", "c"]
    with pytest.raises(AssertionError):
        sim.at(2, order.append, "late")


def test_drift_scales_local_timers():
    sim = Simulator(2, drift={1: 1.25})
    fired = []
    sim.timer(0, 1000, lambda: fired.append((0, sim.now)))
    sim.timer(1, 1000, lambda: fired.append((1, sim.now)))
    sim.run_until(5000)
    assert fired == [(1, 800), (0, 1000)]
    assert sim.local_time(1) == 6250
    with pytest.raises(ValueError):
        Simulator(2, drift={0: 3.0})


def test_crash_drops_node_events_until_restart():
    sim = Simulator(2)
    seen = []
    sim.at(10, seen.append, "before", node=1)
    sim.at(30, seen.append, "stale", node=1)
    sim.at(20, sim.crash_node, 1)
    sim.at(40, sim.restart_node, 1)
    sim.at(50, lambda: sim.at(60, seen.append, "fresh", node=1))
    sim.run_until(100)
    assert seen == ["before", "fresh"]


# ---- links

def test_delivery_delay_within_bounds_and_fifo():
    sim = Simulator(2, seed=3)
    got = []
    for k in range(200):
        sim.at(k * 10, sim.send, 0, 1, got.append, k)
    sim.run_until(100_000)
    assert got == list(range(200))
    for d in sim.deliveries:
        assert d.received > d.sent
        assert d.received - d.sent >= 500


def test_local_delivery_one_tick():
    sim = Simulator(1)
    got = []
    sim.send(0, 0, lambda p: got.append(sim.now), "x")
    sim.run_until(10)
    assert got == [1]


def test_total_omission_loses_everything():
    sim = Simulator(2, link=LinkModel(omission_p=1.0))
    got = []
    assert sim.send(0, 1, got.append, 1) is False
    sim.run_until(10_000)
    assert got == []


def test_partition_blocks_at_send_and_delivery():
    link = LinkModel(1000, 0, partitions=[Partition(500, 2000, frozenset({0}), frozenset({1}))])
    sim = Simulator(2, link=link)
    got = []
    sim.send(0, 1, got.append, "in-flight")      # sent at 0, due at 1000: blocked on arrival
    sim.at(600, sim.send, 0, 1, got.append, "during")
    sim.at(2000, sim.send, 0, 1, got.append, "after")
    sim.run_until(10_000)
    assert got == ["after"]


def test_send_from_crashed_node_is_lost():
    sim = Simulator(2)
    sim.crash_node(0)
    assert sim.send(0, 1, print, "x") is False


# ---- watchdog actor

def wd(period=100, on_error=("warn_backbone",), watched=None):
    return WatchdogConfig(1, watched, period, on_error, None)


def run_watchdog(beats, until, **kw):
    sim = Simulator(1)
    raised, warned, requests = [], [], []
    w = WatchdogActor(wd(**kw), 0, sim, raised.append, lambda u, x: warned.append((u, x)),
                      lambda v, u: requests.append((v, u)))
    sim.at(0, w.start)
    for t in beats:
        sim.at(t, w.heartbeat)
    sim.run_until(until)
    return w, raised, warned, requests


def test_watchdog_quiet_under_regular_heartbeats():
    w, raised, _, _ = run_watchdog(range(80, 10_000, 80), 10_000)
    assert w.expired_count == 0 and raised == []


def test_watchdog_fires_once_after_silence():
    w, raised, _, _ = run_watchdog(range(80, 1000, 80), 5000, watched=7)
    assert w.expired_count == 1
    assert w.sim.trace[0].startswith(f"{960 + 101}\t")
    phase, missed = raised[0]
    assert phase.condition == m.PHASE_SET and phase.args == (WATCHDOG_EXPIRED,)
    assert missed.condition == m.DEADLINE_MISSED and missed.subject == 7


def test_watchdog_other_error_actions():
    _, _, warned, _ = run_watchdog([], 500, on_error=("warn_task", 9), watched=4)
    assert warned == [(9, 4)]
    _, _, _, requests = run_watchdog([], 500, on_error=("restart",), watched=4)
    assert requests == [("restart", 4)]
    with pytest.raises(ValueError):
        WatchdogActor(wd(period=0), 0, Simulator(1), print)


# ---- whole-platform properties

def test_heartbeat_stream_count():
    res = compile_fixture("watchdog/config.ariel", "watchdog/or.ariel")
    sc = parse_scenario("seed 1\nuntil 1000000\nheartbeat 4 to 5 every 100000\n")
    s = System(res.symtab, res.program, sc)
    s.run()
    beats = [line for line in s.sim.trace if "\theartbeat\t" in line]
    assert len(beats) == 1_000_000 // 100_000


def test_group_send_multicasts():
    res = compile_fixture("watchdog/config.ariel", "watchdog/or.ariel")
    s = System(res.symtab, res.program, parse_scenario("until 100000"))
    s.run(50_000)
    s.post(4, 10, ("hello",))
    s.run(100_000)
    app = [d for d in s.sim.deliveries if d.tag == "app"]
    assert sorted(d.dst for d in app) == [1, 2, 3]
    assert all(s.tasks[u].inbox[-1][1] == ("hello",) for u in (1, 2, 3))


def test_isolated_sender_sends_nothing():
    res = compile_fixture("watchdog/config.ariel", "watchdog/or.ariel")
    s = System(res.symtab, res.program, parse_scenario("until 100000"))
    s.run(50_000)
    s.tasks[4].isolated = True
    before = len(s.sim.deliveries)
    s.post(4, 10, ("hello",))
    s.run(100_000)
    assert not [d for d in s.sim.deliveries[before:] if d.tag == "app"]


BB = """NPROCS = 4
Define 0 = MANAGER
Define 1-3 = ASSISTANTS
TASK [0,3] IS NODE 0, TASKID [0,3]
"""


def run_bb(scenario: str):
    from ftbench.lang import compile_script
    res = compile_script(BB)
    s = System(res.symtab, res.program, parse_scenario(scenario))
    s.run()
    return s


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 3), st.integers(1_000_000, 4_000_000))
def test_causality_and_crash_completeness(seed, victim, t_crash):
    s = run_bb(f"seed {seed}\nuntil 8000000\nomission 0.05\n"
               f"crash node {victim} at {t_crash}\n")
    assert all(d.received > d.sent for d in s.sim.deliveries)
    after = [line for line in s.sim.trace
             if int(line.split("\t")[0]) > t_crash and line.split("\t")[1] == str(victim)]
    assert after == []
    assert not [d for d in s.sim.deliveries if d.received > t_crash and victim in (d.dst,)]


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32), st.integers(500_000, 3_000_000), st.integers(1_000_000, 4_000_000))
def test_partition_audit(seed, t0, length):
    t1 = t0 + length
    s = run_bb(f"seed {seed}\nuntil 9000000\npartition {t0} {t1} 0,1|2,3\n")
    side = {0: "a", 1: "a", 2: "b", 3: "b"}
    for d in s.sim.deliveries:
        if side[d.src] != side[d.dst]:
            assert not (t0 <= d.received < t1)
            assert not (t0 <= d.sent < t1)


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 2**32))
def test_determinism(seed):
    sc = f"seed {seed}\nuntil 6000000\nomission 0.02\ncrash node 0 at 2000000\n"
    assert run_bb(sc).sim.trace_text() == run_bb(sc).sim.trace_text()
