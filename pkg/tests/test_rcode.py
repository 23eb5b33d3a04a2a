import pytest
from hypothesis import given, strategies as st

from ftbench import model as m
from ftbench import rcode as rc
from ftbench.lang import compile_script, dict_loader

from conftest import FIXTURES, compile_fixture

HALT_ONLY = rc.RcodeProgram([rc.Triplet(rc.HALT)])


def voter():
    return compile_fixture("voter.ariel")


def db_for(res, phases=()):
    db = m.Database(res.symtab.topology())
    for uid, value in phases:
        db.raise_event(m.Notification(m.PHASE_SET, m.TASK, uid, (value,)))
    return db


def compile_text(text):
    res = compile_script(text, dict_loader({}))
    assert res.ok, res.transcript
    return res


# ---- binary format

def test_halt_only_layout():
    data = rc.serialize(HALT_ONLY)
    assert len(data) == 10 + 12
    assert data[:4] == b"RCOD"


def test_fifteen_triplet_payload():
    prog = rc.RcodeProgram([rc.Triplet(rc.PUSH, k) for k in range(14)] + [rc.Triplet(rc.HALT)])
    data = rc.serialize(prog)
    assert len(data) - 10 == 15 * 12
    assert rc.deserialize(data).count == 15


def test_decode_errors_carry_offsets():
    data = bytearray(rc.serialize(voter().program))
    bad = bytes([data[0] ^ 0xFF]) + bytes(data[1:])
    with pytest.raises(rc.DecodeError) as e:
        rc.deserialize(bad)
    assert e.value.offset == 0
    with pytest.raises(rc.DecodeError):
        rc.deserialize(bytes(data[:-1]))
    with pytest.raises(rc.DecodeError):
        rc.deserialize(bytes(data) + b"\0")
    with pytest.raises(rc.DecodeError) as e:
        rc.deserialize(b"RCOD\x09\x00" + bytes(data[6:]))
    assert e.value.offset == 4


triplets = st.builds(rc.Triplet, st.integers(0, 24), st.integers(-2**31, 2**31 - 1),
                     st.integers(-2**31, 2**31 - 1))


@given(st.lists(triplets, max_size=50))
def test_serialize_round_trip(trips):
    prog = rc.RcodeProgram(trips)
    assert rc.deserialize(rc.serialize(prog)) == prog


# ---- listing

LISTING_ROWS = [
    ["00000", "SET_ROLE", "0", "Manager"], ["00001", "SET_ROLE", "1", "Assistant"],
    ["00002", "SET_ROLE", "2", "Assistant"], ["00003", "SET_ROLE", "3", "Assistant"],
    ["00004", "IF"], ["00005", "STORE_PHASE", "Thread", "0"],
    ["00006", "COMPARE", "==", "9999"], ["00007", "FALSE", "17"],
    ["00008", "STOP", "Thread", "0"],
    ["00009", "PUSH", "18"], ["00010", "SEND", "Thread", "3"],
    ["00011", "PUSH", "0"], ["00012", "SEND", "Thread", "3"],
    ["00013", "PUSH", "3"], ["00014", "SEND", "Thread", "1"],
    ["00015", "PUSH", "3"], ["00016", "SEND", "Thread", "2"],
    ["00017", "FI"], ["00018", "ANEW_OA_OBJECTS", "1"], ["00019", "STOP"],
]


def test_listing_layout():
    text = (FIXTURES / "voter.ariel").read_text().replace(
        'INCLUDE "my_definitions.h"\n',
        'INCLUDE "my_definitions.h"\nNPROCS = 5\nDEFINE 0 = MANAGER\nDEFINE 1-3 = ASSISTANTS\n')
    res = compile_script(text, dict_loader(
        {"my_definitions.h": (FIXTURES / "my_definitions.h").read_text()}))
    lines = rc.render_listing(res.program).splitlines()
    assert lines[0].split() == ["line", "rcode", "opn1", "opn2"]
    assert [ln.split() for ln in lines[1:]] == LISTING_ROWS
    # listings print the jump as an offset from the FALSE
    # triplet; this format stores the absolute index of the FI instead
    false_pc = res.program.names().index("FALSE")
    assert res.program.triplets[false_pc].opn1 - false_pc == 10


def test_listing_empty_and_unknown_opcode():
    assert rc.render_listing(rc.RcodeProgram()).splitlines() == \
        ["line   rcode            opn1     opn2"]
    text = rc.render_listing(rc.RcodeProgram([rc.Triplet(77, 1, 2)]))
    assert text.splitlines()[1].split()[1] == "77"


# ---- execution against the reference trace

def test_reference_trace_reproduced():
    res = compile_fixture("trace/strategy.ariel")
    log = rc.Interpreter(res.program).execute(db_for(res, [(1, 9999)]))
    expected = (FIXTURES / "trace" / "expected_trace.txt").read_text().splitlines()
    body = [line for line in log.trace if 5 <= int(line.split("\t")[0]) <= 49]
    assert body == expected
    assert [(a.verb, [t.id for t in a.targets], a.value) for a in log.actions] == [
        ("stop", [1], None), ("send", [3], 10), ("send", [3], 1),
        ("send", [2], 3), ("send", [0], 3)]


def test_section_actions_in_order():
    res = voter()
    log = rc.Interpreter(res.program).execute(db_for(res, [(0, 9999)]))
    assert [(a.verb, a.targets, a.value) for a in log.actions] == [
        ("stop", (m.task(0),), None),
        ("send", (m.task(3),), 18), ("send", (m.task(3),), 0),
        ("send", (m.task(1),), 3), ("send", (m.task(2),), 3)]


def test_false_guard_yields_no_actions():
    res = compile_fixture("trace/strategy.ariel")
    log = rc.Interpreter(res.program).execute(db_for(res))
    assert log.actions == []
    jumps = [line for line in log.trace if "Conditional GOTO" in line]
    assert len(jumps) == 3 and all("fulfilled," in j and "unfulfilled" not in j for j in jumps)


def test_halt_only_program():
    res = voter()
    log = rc.Interpreter(HALT_ONLY).execute(db_for(res))
    assert log.actions == []
    assert log.trace == ["0\tHALT."]


def test_execution_is_pure_and_repeatable():
    res = voter()
    db = db_for(res, [(0, 9999)])
    before = db.snapshot()
    interp = rc.Interpreter(res.program)
    a = interp.execute(db, sink=lambda req: None)
    b = interp.execute(db)
    assert a == b
    assert db.states == before.states and db.log == before.log


def test_skipped_section_emits_nothing():
    res = compile_fixture("trace/strategy.ariel")
    seen = []
    rc.Interpreter(res.program).execute(db_for(res, [(2, 9999)]), sink=seen.append)
    # only the third section may act
    assert {a.pc for a in seen} <= set(range(35, 50))
    assert seen[0].targets == (m.task(2),)


def test_reentry_rejected():
    res = voter()
    db = db_for(res, [(0, 9999)])
    interp = rc.Interpreter(res.program)

    def sink(_req):
        with pytest.raises(RuntimeError):
            interp.execute(db)
    interp.execute(db, sink)


# ---- addressing modes and the remaining verbs

GROUPED = """NPROCS = 2
TASK [0,3] IS NODE 0, TASKID [0,3]
LOGICAL 10 IS TASK 0, TASK 1, TASK 2 END LOGICAL
IF [ FAULTY G10 AND RUNNING T3 ]
THEN
    STOP TASK@1
    RESTART TASK~1
    ISOLATE GROUP$1
    ENABLE TASK@
FI
"""


def test_atom_register_modes():
    res = compile_text(GROUPED)
    db = m.Database(res.symtab.topology())
    db.apply_effect("start", m.task(3))
    db.raise_event(m.Notification(m.FAULT_DETECTED, m.TASK, 1))
    acts = rc.Interpreter(res.program).execute(db).actions
    assert [(a.verb, a.targets) for a in acts] == [
        ("stop", (m.task(1),)),
        ("restart", (m.task(0), m.task(2))),
        ("isolate", (m.group(10),)),
        ("enable", (m.task(1), m.task(3)))]


def test_remove_warn_call_pause():
    text = """NPROCS = 1
TASK 0 IS NODE 0, TASKID 0
TASK 1 IS NODE 0, TASKID 1
IF [ FAULTY T0 ]
THEN
    REMOVE ANY T0 FROM ERRORLIST
    REMOVE PHASE T0 FROM ERRORLIST
    ERR 102 T0 WARN T1 (4, 5)
    CALL 7 (1, 2, 3)
    PAUSE 250
FI
"""
    res = compile_text(text)
    db = m.Database(res.symtab.topology())
    db.raise_event(m.Notification(m.FAULT_DETECTED, m.TASK, 0))
    called = []
    log = rc.Interpreter(res.program, {7: lambda *a: called.append(a)}).execute(db)
    acts = log.actions
    assert [(a.verb, a.value) for a in acts] == [
        ("remove", rc.REMOVE_ANY), ("remove", rc.REMOVE_PHASE), ("warn", 102),
        ("call", 7), ("pause", 250)]
    assert acts[2].targets == (m.task(1),) and acts[2].subject == m.task(0)
    assert acts[2].args == (4, 5)
    assert acts[3].args == (1, 2, 3) and called == [(1, 2, 3)]
    # REMOVE goes through the sink; the database itself is untouched
    assert db.errn(m.task(0)) == 1


def test_send_faulty_pushes_matched_id():
    text = """NPROCS = 1
TASK [0,2] IS NODE 0, TASKID [0,2]
LOGICAL 9 IS TASK 0, TASK 1 END LOGICAL
IF [ FAULTY G9 ]
THEN
    SEND FAULTY T2
FI
"""
    res = compile_text(text)
    db = m.Database(res.symtab.topology())
    db.raise_event(m.Notification(m.FAULT_DETECTED, m.TASK, 1))
    acts = rc.Interpreter(res.program).execute(db).actions
    assert [(a.verb, a.targets, a.value) for a in acts] == [("send", (m.task(2),), 1)]


def test_nested_and_else_branches():
    res = compile_fixture("tmr/tmr_alpha.ariel")
    topo = res.symtab.topology()
    interp = rc.Interpreter(res.program)
    db = m.Database(topo, res.symtab.alpha_params)
    db.raise_event(m.Notification(m.FAULT_DETECTED, m.TASK, 0))
    assert [a.verb for a in interp.execute(db).actions] == ["restart", "send", "send"]
    for _ in range(2):
        db.raise_event(m.Notification(m.FAULT_DETECTED, m.TASK, 0))
    assert [a.verb for a in interp.execute(db).actions] == ["stop"] + ["send"] * 4


# ---- runtime errors

@pytest.mark.parametrize("prog, msg", [
    ([rc.Triplet(rc.COMPARE, 1, 0), rc.Triplet(rc.HALT)], "underflow"),
    ([rc.Triplet(rc.PUSH, 0), rc.Triplet(rc.FALSE, 99), rc.Triplet(rc.HALT)], "jump"),
    ([rc.Triplet(rc.STOP, rc.entity_operand(m.TASK), 42), rc.Triplet(rc.HALT)], "unresolved"),
    ([rc.Triplet(rc.STORE_PHASE, rc.entity_operand(m.TASK), 0), rc.Triplet(rc.HALT)], "guard"),
    ([rc.Triplet(99), rc.Triplet(rc.HALT)], "opcode"),
])
def test_vm_errors_abort_with_position(prog, msg):
    res = voter()
    with pytest.raises(rc.VmError, match=msg) as e:
        rc.Interpreter(rc.RcodeProgram(prog)).execute(db_for(res))
    assert e.value.pc >= 0
