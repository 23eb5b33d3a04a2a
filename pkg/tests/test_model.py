import pytest
from hypothesis import given, strategies as st

from ftbench import model as m
from ftbench.model import (AlphaCounter, Atom, Database, GroupDescriptor, ModelError,
                           Notification, TaskDescriptor, Topology, alpha_update)


def make_db(ntasks=6, nprocs=4, groups=None, alpha=None):
    topo = Topology(nprocs)
    for i in range(ntasks):
        topo.add_task(TaskDescriptor(i, f"t{i}", i % nprocs, i))
    for gid, members in (groups or {}).items():
        topo.add_group(GroupDescriptor(gid, f"g{gid}", tuple(members)))
    return Database(topo, alpha)


def err(uid, label=None, code=m.FAULT_DETECTED):
    return Notification(code, m.TASK, uid, label=label)


def phase(uid, value):
    return Notification(m.PHASE_SET, m.TASK, uid, (value,))


def replay(judgments_by_label, factor):
    """Judgment-by-judgment application of the alpha-count rule, with
    every skipped label counted as a success."""
    alpha = 0.0
    last = None
    for label, j in judgments_by_label:
        if last is not None:
            for _ in range(label - last - 1):
                alpha *= factor
        alpha = alpha + 1 if j else alpha * factor
        last = label
    return alpha


# ---- entities and topology

def test_entity_ref_validation():
    with pytest.raises(ModelError):
        m.EntityRef(7, 0)
    with pytest.raises(ModelError):
        m.task(-1)
    assert str(m.node(3)) == "node 3"


def test_topology_rejects_duplicates_and_bad_groups():
    topo = Topology(2)
    topo.add_task(TaskDescriptor(0, "a", 0, 0))
    with pytest.raises(ModelError):
        topo.add_task(TaskDescriptor(0, "b", 1, 1))
    with pytest.raises(ModelError):
        topo.add_task(TaskDescriptor(1, "b", 0, 0))
    with pytest.raises(ModelError):
        topo.add_group(GroupDescriptor(5, "g", ()))
    with pytest.raises(ModelError):
        topo.add_group(GroupDescriptor(5, "g", (0, 9)))
    with pytest.raises(ModelError):
        topo.add_group(GroupDescriptor(5, "g", (0, 0)))
    topo.add_group(GroupDescriptor(5, "g", (0,)))
    assert topo.resolve(5) == m.group(5)
    with pytest.raises(ModelError):
        topo.resolve(42)


# ---- raise_event

def test_phase_report_is_stored_without_recovery():
    db = make_db()
    assert db.raise_event(phase(0, 9999)) is False
    assert db.query_atom(Atom("PHASE", m.task(0))) == (9999, [0])


def test_first_error_defines_faulty():
    db = make_db()
    assert db.raise_event(err(2)) is True
    assert db.errn(m.task(2)) == 1
    assert db.faulty(m.task(2))


def test_label_gap_counts_implicit_successes():
    db = make_db()
    db.raise_event(err(1, label=24))
    db.raise_event(err(1, label=28))
    value = db.state(m.task(1)).alpha.value
    assert value == pytest.approx(1 * 0.4 ** 3 + 1, abs=1e-12)
    assert value == pytest.approx(replay([(24, 1), (28, 1)], 0.4), abs=1e-12)


def test_undeclared_entity_rejected():
    db = make_db()
    with pytest.raises(ModelError):
        db.raise_event(err(99))
    with pytest.raises(ModelError):
        db.raise_event(Notification(m.PHASE_SET, m.NODE, 0, (1,)))
    with pytest.raises(ModelError):
        db.raise_event(Notification(m.PHASE_SET, m.TASK, 0))


# ---- alpha-count

def test_three_errors_reach_threshold():
    c = AlphaCounter(0.4, 3.0)
    for label in range(3):
        c, verdict = alpha_update(c, 1, label)
    assert c.value == 3.0
    assert verdict == m.PERMANENT


def test_error_then_success_is_transient():
    c, _ = alpha_update(AlphaCounter(0.4, 3.0), 1, 0)
    c, verdict = alpha_update(c, 0, 1)
    assert c.value == pytest.approx(0.4)
    assert verdict == m.TRANSIENT


def test_alpha_rejects_bad_input():
    with pytest.raises(ModelError):
        AlphaCounter(1.5, 3.0)
    with pytest.raises(ModelError):
        AlphaCounter(0.4, 0.0)
    c, _ = alpha_update(AlphaCounter(), 1, 5)
    with pytest.raises(ModelError):
        alpha_update(c, 1, 5)
    with pytest.raises(ModelError):
        alpha_update(c, 2, 6)


def test_alternating_sequence_flips_once_at_crossing():
    seq = [1, 0] * 3 + [1] * 8
    crossing = next(k for k in range(len(seq))
                    if replay(list(enumerate(seq[:k + 1])), 0.4) >= 5.5)
    c = AlphaCounter(0.4, 5.5)
    flips = []
    for label, j in enumerate(seq):
        before = c.assessment
        c, verdict = alpha_update(c, j, label)
        if (before == m.PERMANENT) != (verdict == m.PERMANENT):
            flips.append(label)
    assert flips == [crossing]


@given(st.lists(st.tuples(st.integers(1, 5), st.integers(0, 1)), min_size=1, max_size=40),
       st.floats(0.0, 1.0))
def test_alpha_replay_with_label_gaps(steps, factor):
    c = AlphaCounter(factor, 3.0)
    label = -1
    seq = []
    for gap, j in steps:
        label += gap
        c, _ = alpha_update(c, j, label)
        seq.append((label, j))
    assert c.value == pytest.approx(replay(seq, factor), abs=1e-12, rel=1e-12)


@given(st.integers(1, 30), st.floats(0.01, 10.0))
def test_persistent_faults_diverge(length, threshold):
    c = AlphaCounter(0.4, threshold)
    for label in range(length):
        c, verdict = alpha_update(c, 1, label)
    assert c.value == length
    assert (verdict == m.PERMANENT) == (length >= threshold)


@given(st.floats(0.0, 0.99), st.floats(1e-9, 1.0))
def test_success_streak_decays(factor, eps):
    c, _ = alpha_update(AlphaCounter(factor, 3.0), 1, 0)
    for label in range(1, 10_000):
        if c.value < eps:
            break
        c, _ = alpha_update(c, 0, label)
    assert c.value < eps


@given(st.lists(st.integers(0, 1), max_size=20), st.integers(1, 20))
def test_burst_never_regresses(prefix, burst):
    c = AlphaCounter(0.4, 3.0)
    label = 0
    for j in prefix:
        c, _ = alpha_update(c, j, label)
        label += 1
    seen_permanent = False
    for _ in range(burst):
        c, verdict = alpha_update(c, 1, label)
        label += 1
        if seen_permanent:
            assert verdict == m.PERMANENT
        seen_permanent |= verdict == m.PERMANENT


# ---- query_atom

def test_group_faulty_is_existential():
    db = make_db(groups={10: (1, 2, 3)})
    db.raise_event(err(1))
    db.raise_event(err(3))
    assert db.query_atom(Atom("FAULTY", m.group(10))) == (1, [1, 3])
    assert db.query_atom(Atom("ERRN", m.group(10))) == (2, [1, 3])


def test_phase_of_task_after_report():
    db = make_db()
    db.raise_event(phase(1, 9999))
    assert db.query_atom(Atom("PHASE", m.task(1)))[0] == 9999


def test_pristine_task_has_no_errors():
    db = make_db()
    assert db.errn(m.task(5)) == 0
    assert not db.faulty(m.task(5))
    assert db.query_atom(Atom("PHASE", m.task(5)))[0] == m.DEFAULT_PHASE


def test_phase_on_node_is_rejected():
    with pytest.raises(ModelError, match="Can only use PHASE with tasks"):
        make_db().query_atom(Atom("PHASE", m.node(0)))


def test_errt_reports_latest_code():
    db = make_db(groups={10: (1, 2)})
    db.raise_event(err(1, code=m.VALUE_FAULT))
    db.raise_event(err(2, code=m.DEADLINE_MISSED))
    assert db.query_atom(Atom("ERRT", m.group(10))) == (m.DEADLINE_MISSED, [2])
    assert db.query_atom(Atom("ERRT", m.task(3))) == (0, [])


def test_deadlocked_needs_mutual_reports():
    db = make_db()
    db.raise_event(Notification(m.DEADLOCK, m.TASK, 0, (1,)))
    assert db.query_atom(Atom("DEADLOCKED", m.task(0), m.task(1)))[0] == 0
    db.raise_event(Notification(m.DEADLOCK, m.TASK, 1, (0,)))
    assert db.query_atom(Atom("DEADLOCKED", m.task(0), m.task(1))) == (1, [0, 1])


def test_status_atoms_follow_effects():
    db = make_db()
    t = m.task(0)
    assert db.query_atom(Atom("RUNNING", t))[0] == 0
    db.apply_effect("start", t)
    assert db.query_atom(Atom("RUNNING", t))[0] == 1
    db.apply_effect("isolate", t)
    assert db.query_atom(Atom("ISOLATED", t))[0] == 1
    assert db.query_atom(Atom("RUNNING", t))[0] == 0
    db.apply_effect("enable", t)
    assert db.query_atom(Atom("REINTEGRATED", t))[0] == 1
    db.apply_effect("restart", t)
    assert db.query_atom(Atom("RESTARTED", t))[0] == 1
    db.apply_effect("reboot", m.node(1))
    assert db.query_atom(Atom("REBOOTED", m.node(1)))[0] == 1
    with pytest.raises(ModelError):
        db.apply_effect("explode", t)


def test_transient_status():
    db = make_db()
    db.raise_event(err(0))
    assert db.query_atom(Atom("TRANSIENT", m.task(0)))[0] == 1
    db.raise_event(err(0))
    db.raise_event(err(0))
    assert db.query_atom(Atom("TRANSIENT", m.task(0)))[0] == 0


# ---- remove

def test_remove_any_purges_errors():
    db = make_db()
    for _ in range(3):
        db.raise_event(err(2))
    db.remove("any", m.task(2))
    assert db.errn(m.task(2)) == 0
    assert not db.faulty(m.task(2))


def test_remove_phase_resets_group_members():
    db = make_db(groups={10: (1, 2, 3)})
    for uid in (1, 2, 3):
        db.raise_event(phase(uid, 9998))
    db.remove("phase", m.group(10))
    assert [db.query_atom(Atom("PHASE", m.task(u)))[0] for u in (1, 2, 3)] == [0, 0, 0]


def test_remove_on_pristine_entity_is_noop():
    db = make_db()
    before = db.snapshot()
    db.remove("any", m.task(4))
    assert db.states == before.states


def test_remove_rejects_bad_selector():
    with pytest.raises(ModelError):
        make_db().remove("all", m.task(0))


@given(st.integers(0, 5), st.lists(st.integers(0, 5), max_size=5))
def test_raise_then_remove_restores_error_state(uid, noise):
    db = make_db()
    for u in noise:
        if u != uid:
            db.raise_event(err(u))
    db.raise_event(err(uid))
    db.remove("any", m.task(uid))
    assert db.errn(m.task(uid)) == 0
    assert not db.faulty(m.task(uid))
