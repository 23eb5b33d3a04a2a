import pytest
from hypothesis import given, settings, strategies as st

from ftbench.backbone import (ALIVE, ASSISTANT, MANAGER, REMOVED, BackboneTimeouts, DbOp,
                              Replica, elect)
from ftbench.lang import compile_script
from ftbench.model import (COMPONENT_CRASH, NODE_CRASH, TASK, VALUE_FAULT, Notification)
from ftbench.simnet import parse_scenario
from ftbench.system import System

BB = """NPROCS = 4
Define 0 = MANAGER
Define 1-3 = ASSISTANTS
""" + "".join(f"TASK {i} IS NODE {i}, TASKID {i}\n" for i in range(4))

T = BackboneTimeouts()


def build(scenario: str, script: str = BB) -> System:
    res = compile_script(script)
    assert res.ok, res.transcript
    return System(res.symtab, res.program, parse_scenario(scenario))


def events(s: System, event: str, node=None):
    out = []
    for line in s.sim.trace:
        t, n, actor, ev, *rest = line.split("\t")
        if actor == "backbone" and ev == event and (node is None or int(n) == node):
            out.append((int(t), int(n), rest[0] if rest else ""))
    return out


# ---- timeouts

def test_timeouts_defaults_and_table_names():
    t = BackboneTimeouts.from_table({"MIA_SEND_TIMEOUT": 100, "MIA_RECV_TIMEOUT": 300,
                                     "TEIF_TIMEOUT": 7})
    assert (t.mia_send, t.mia_recv, t.teif, t.taia_send) == (100, 300, 7, T.taia_send)


@pytest.mark.parametrize("kw", [dict(taia_recv=10, taia_send=10), dict(mia_recv=5),
                                dict(ia_set=1, ia_clear=2), dict(teif=0)])
def test_timeouts_invariants(kw):
    with pytest.raises(ValueError):
        BackboneTimeouts(**kw)


def test_script_timeouts_reach_components():
    s = build("until 1", BB + "MIA_SEND_TIMEOUT = 400000\n")
    assert s.timeouts.mia_send == 400_000


# ---- election rule

def test_elect_rule():
    view = {0: REMOVED, 1: ALIVE, 2: ALIVE, 3: ALIVE}
    assert [elect(view, n) for n in (1, 2, 3)] == [ASSISTANT, ASSISTANT, MANAGER]
    assert elect({0: REMOVED, 1: REMOVED}, 0) == MANAGER          # singleton block
    # a node whose component crashed is not electable
    assert elect({0: ALIVE, 1: ALIVE, 2: ALIVE}, 1, excluded={2}) == MANAGER


def test_configured_roles_win_at_boot():
    s = build("until 100000")
    s.run()
    assert s.managers() == [0]
    assert [c.role for c in s.components] == [MANAGER, ASSISTANT, ASSISTANT, ASSISTANT]


# ---- suspicion and removal

def test_manager_crash_bounded_detection_and_election():
    crash = 2_000_000
    s = build(f"until 8000000\ncrash node 0 at {crash}\n")
    s.run()
    bound = crash + T.mia_recv + T.teif + 2 * s.sim.link.max_delay
    removals = [e for e in events(s, "remove") if e[2].startswith("node 0")]
    assert sorted(n for _, n, _ in removals) == [1, 2, 3]
    assert all(crash < t <= bound for t, _, _ in removals)
    assert s.managers() == [3]
    assert all(c.manager == 3 for c in s.live_components())


def test_assistant_crash_removed_by_manager_with_node_crash_event():
    s = build("until 6000000\ncrash node 2 at 1000000\n")
    s.run()
    mgr = s.components[0]
    assert mgr.view[2] == REMOVED
    errs = [e for e in mgr.db.error_list() if e[1] == 2 and e[2]]
    assert errs and errs[0][2][0][0] == NODE_CRASH
    # the removal reaches the other assistants through the manager's view
    assert s.components[1].view[2] == REMOVED and s.components[3].view[2] == REMOVED


def test_component_crash_verdict_keeps_node():
    s = build("until 7000000\ncrash backbone 2 at 1000000\n")
    s.run()
    mgr = s.components[0]
    assert [n for _, n, d in events(s, "component-crash") if d.startswith("node 2")] == [0]
    assert not [e for e in events(s, "remove") if e[2].startswith("node 2")]
    assert mgr.view[2] == ALIVE and 2 in mgr.component_down
    assert s.iats[2].observed_set >= 1
    conds = [c for e in mgr.db.error_list() if e[1] == 2 for c, _, _ in e[2]]
    assert conds == [COMPONENT_CRASH]


def test_iat_quiet_while_component_runs():
    s = build("until 20000000")
    s.run()
    assert all(g.observed_set == 0 for g in s.iats)


def test_no_false_suspicion_fault_free():
    s = build("until 60000000")
    s.run()
    assert events(s, "suspect") == [] and events(s, "remove") == []
    assert all(v == ALIVE for c in s.components for v in c.view.values())
    tags = {d.tag for d in s.sim.deliveries}
    assert not tags & {"TEIF", "ANNOUNCE"}


# ---- partitions and restarts

def test_partition_gives_two_managers_then_merges():
    s = build("until 14000000\npartition 1000000 7000000 0,1|2,3\n")
    s.run(6_900_000)
    assert sorted(s.managers()) == [0, 3]
    s.run()
    assert s.managers() == [3]
    demoted = events(s, "demote")
    assert [n for _, n, _ in demoted] == [0]
    assert all(c.manager == 3 for c in s.live_components())


def test_restarted_node_readmitted():
    restart = 5_000_000
    s = build(f"until 9000000\ncrash node 1 at 1000000\nrestart node 1 at {restart}\n")
    s.run(restart - 1)
    assert s.components[0].view[1] == REMOVED
    s.run(restart + T.mia_send + 2 * s.sim.link.max_delay)
    for c in s.live_components():
        assert c.view[1] == ALIVE, c.node
    assert s.components[1].manager == 0


# ---- replication and recovery

def test_replica_out_of_order_replay():
    from ftbench.model import Topology
    topo = compile_script(BB).symtab.topology()
    a, b = Replica(topo), Replica(topo)
    ops = [DbOp(t, 1, t, "notify", Notification(VALUE_FAULT, TASK, 1, sim_time=t))
           for t in (1, 2, 3)]
    a.merge(ops)
    b.merge(ops[2:])
    b.merge(ops[:2])
    assert a.error_list() == b.error_list() and a.digest() == b.digest()
    assert b.merge(ops) == []


def fault(node, uid, t):
    return Notification(VALUE_FAULT, TASK, uid, sim_time=t)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32),
       st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3),
                          st.integers(100_000, 3_000_000)), min_size=1, max_size=6))
def test_replica_convergence(seed, faults):
    s = build(f"seed {seed}\nomission 0.05\nuntil 12000000\n")
    for node, uid, t in faults:
        s.sim.at(t, lambda node=node, uid=uid: s.components[node].raise_events(
            [fault(node, uid, s.sim.now)]), node=node)
    s.run()
    lists = [c.db.error_list() for c in s.live_components()]
    assert all(x == lists[0] for x in lists)
    assert sum(len(e[2]) for e in lists[0]) == len(faults)


def test_burst_of_three_errors_gives_three_runs():
    script = BB + "IF [ FAULTY T0 OR FAULTY T1 OR FAULTY T2 ]\nTHEN\n  PAUSE 1000\nFI\n"
    s = build("until 3000000", script)
    mgr = s.components[0]
    s.sim.at(1_000_000, lambda: mgr.raise_events(
        [fault(0, u, s.sim.now) for u in (0, 1, 2)]), node=0)
    s.run()
    assert mgr.runs == 3 and not mgr.recovering
    starts = [t for t, _, _ in events(s, "recovery-start")]
    ends = [t for t, _, _ in events(s, "recovery-end")]
    # strictly one at a time
    assert all(e < nxt for e, nxt in zip(ends, starts[1:]))
    assert len(starts) == len(ends) == 3


def test_notification_about_unknown_task_is_diagnostic():
    s = build("until 2000000")
    s.sim.at(500_000, lambda: s.components[1].raise_events([fault(1, 77, s.sim.now)]), node=1)
    s.run()
    assert events(s, "diagnostic")
    assert s.managers() == [0]
