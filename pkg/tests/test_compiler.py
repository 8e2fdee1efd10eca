import json
import math
from collections import Counter

import pytest
from hypothesis import HealthCheck, given, settings

from pulsectl.cli import demo_path
from pulsectl.compiler import compile_circuit
from pulsectl.compiler.calibration import CalibrationError, CalibrationSet
from pulsectl.compiler.circuit import (
    Barrier, CircuitParseError, Delay, Gate, IfElse, Measure, RawPulse, VirtualZ, dump_circuit, parse_circuit,
)
from pulsectl.compiler.ir import (
    BranchOnResult, CompileError, Goto, IrBranch, IrOp, IrVirtualZ, Label, Stop, SyncCores, TimedPulse,
    iter_nodes, iter_pulses, programs_from_json, programs_to_json,
)
from pulsectl.compiler.passes import apply_virtual_z, resolve_gates, schedule, split_per_core
from circuits import circuits

CAL_DOC = json.loads(demo_path("calibration.json").read_text())
X90 = CAL_DOC["qubits"]["Q0"]["gates"]["X90"][0]
X90_SAMPLES = CAL_DOC["envelopes"][X90["env"]]["length"]
X90_TICKS = X90_SAMPLES // 16  # 8 GSPS drive, 500 MHz qclk
WINDOW = CAL_DOC["qubits"]["Q0"]["readout"]["window_ticks"]
FEEDBACK = CAL_DOC["feedback_latency_ticks"]


def lines(*stmts):
    return "\n".join(json.dumps(s) for s in stmts)


# -- parsing ---------------------------------------------------------------------

def test_parse_single_gate():
    prog = parse_circuit('[{"gate":"X90","qubit":"Q0"}]')
    assert prog.statements == (Gate("X90", ("Q0",)),)


def test_parse_fast_reset_source():
    prog = parse_circuit(demo_path("fast_reset.circ").read_text())
    kinds = [type(s) for s in prog.statements]
    assert kinds == [Gate, Measure, IfElse, Measure]
    cond = prog.statements[2]
    assert cond.result == "m_mid" and cond.value == 1
    assert cond.then == (Gate("X90", ("Q0",)), Gate("X90", ("Q0",)))
    assert prog.results == ("m_mid", "m_final")


def test_parse_all_statement_kinds():
    text = """
    // every statement form
    {"gate": "CZ", "qubits": ["Q0", "Q1"]}
    {"pulse": "Q0.qdrv", "freq": 4.5e9, "phase": 0.5, "amp": 0.25, "env": "x90_gauss", "length": 256}
    {"virtual_z": "Q1", "phase": 1.25}
    {"measure": "Q1", "result": "r"}
    {"if": "r", "equals": 0, "then": [{"delay": ["Q0"], "ticks": 8}], "else": [{"barrier": "all"}]}
    {"barrier": ["Q0"]}
    """
    prog = parse_circuit(text)
    assert prog.statements == (
        Gate("CZ", ("Q0", "Q1")),
        RawPulse("Q0.qdrv", 4.5e9, 0.5, 0.25, "x90_gauss", 256),
        VirtualZ("Q1", 1.25),
        Measure("Q1", "r"),
        IfElse("r", 0, (Delay(("Q0",), 8),), (Barrier(()),)),
        Barrier(("Q0",)),
    )
    assert parse_circuit(dump_circuit(prog)) == prog


def test_undefined_result_diagnostic():
    with pytest.raises(CircuitParseError) as exc:
        parse_circuit(lines({"gate": "X90", "qubit": "Q0"}, {"if": "mX", "then": []}))
    (d,) = exc.value.diagnostics
    assert "undefined result name 'mX'" in d.message
    assert (d.line, d.col) == (2, 1)


def test_result_inside_arm_not_visible_after():
    text = lines({"measure": "Q0", "result": "a"},
                 {"if": "a", "then": [{"measure": "Q1", "result": "b"}]},
                 {"if": "b", "then": []})
    with pytest.raises(CircuitParseError, match="undefined result name 'b'"):
        parse_circuit(text)


def test_duplicate_result():
    with pytest.raises(CircuitParseError, match="more than once"):
        parse_circuit(lines({"measure": "Q0", "result": "a"}, {"measure": "Q1", "result": "a"}))


def test_unknown_statement_kind():
    with pytest.raises(CircuitParseError, match="unknown statement kind"):
        parse_circuit('{"rotate": "Q0"}')


@pytest.mark.parametrize("text", [
    '{"delay": ["Q0"], "ticks": "ten"}',
    '{"virtual_z": "Q0", "phase": true}',
    '{"delay": ["Q0"], "ticks": 1.5}',
])
def test_malformed_literal(text):
    with pytest.raises(CircuitParseError, match="malformed literal"):
        parse_circuit(text)


def test_malformed_json_has_position():
    with pytest.raises(CircuitParseError) as exc:
        parse_circuit('{"gate": "X90", "qubit": "Q0"}\n{"gate": }')
    assert exc.value.diagnostics[0].line == 2


def test_multiple_diagnostics_collected():
    with pytest.raises(CircuitParseError) as exc:
        parse_circuit('{"foo": 1}\n{"bar": 2}')
    assert [d.line for d in exc.value.diagnostics] == [1, 2]


# -- gate resolution -------------------------------------------------------------

def test_resolve_x90(cal, channels):
    ir = resolve_gates(parse_circuit('{"gate": "X90", "qubit": "Q0"}'), cal, channels)
    (op,) = ir.body
    (p,) = op.pulses
    assert p.channel == "Q0.qdrv"
    assert p.freq == CAL_DOC["qubits"]["Q0"]["drive_freq"]
    assert (p.env, p.amp, p.length, p.phase) == (X90["env"], X90["amp"], X90_SAMPLES, 0.0)


def test_resolve_empty(cal, channels):
    ir = resolve_gates(parse_circuit(""), cal, channels)
    assert ir.body == () and ir.results == ()


def test_resolve_measure(cal, channels):
    ir = resolve_gates(parse_circuit('{"measure": "Q0", "result": "m"}'), cal, channels)
    (op,) = ir.body
    ro = CAL_DOC["qubits"]["Q0"]["readout"]
    drive, demod = op.pulses
    assert channels[drive.channel].kind == "readout-drive"
    assert channels[demod.channel].kind == "readout-demod"
    assert drive.freq == demod.freq == ro["freq"]
    assert demod.offset == ro["demod_delay_ticks"]
    assert (op.kind, op.result, op.fproc_id, op.min_duration) == ("measure", "m", 0, ro["window_ticks"])
    # both readout drives feed one DAC
    assert channels["Q0.rdrv"].dac == channels["Q1.rdrv"].dac


def test_fproc_ids_in_program_order(cal, channels):
    ir = resolve_gates(parse_circuit(demo_path("conditional_flip.circ").read_text()), cal, channels)
    assert ir.fproc_of == {"m0": 0, "m1": 1}


def test_missing_gate_calibration(cal, channels):
    with pytest.raises(CalibrationError, match="missing calibration for gate Y90 on Q0"):
        resolve_gates(parse_circuit('{"gate": "Y90", "qubit": "Q0"}'), cal, channels)


def test_unknown_qubit(cal, channels):
    with pytest.raises(CalibrationError, match="Q7"):
        resolve_gates(parse_circuit('{"gate": "X90", "qubit": "Q7"}'), cal, channels)


def test_raw_pulse_passthrough(cal, channels):
    src = '{"pulse": "Q1.qdrv", "freq": 4.9e9, "phase": 0.1, "amp": 0.2, "env": "x90_gauss"}'
    ir = resolve_gates(parse_circuit(src), cal, channels)
    (p,) = ir.body[0].pulses
    assert (p.channel, p.freq, p.phase, p.amp, p.length, p.vz_qubit) == ("Q1.qdrv", 4.9e9, 0.1, 0.2, 256, "Q1")


def test_raw_pulse_unknown_channel(cal, channels):
    with pytest.raises(CompileError, match="unmapped destination"):
        resolve_gates(parse_circuit('{"pulse": "Q9.qdrv", "freq": 1, "amp": 0.1, "env": "x90_gauss"}'), cal, channels)


def test_multi_qubit_gate_template(channels):
    doc = json.loads(json.dumps(CAL_DOC))
    doc["gates"] = {"CR:Q0,Q1": [{"env": "x90_gauss", "amp": 0.2, "dest": "Q0.qdrv", "freq": 4.9e9},
                                 {"env": "x90_gauss", "amp": 0.1, "dest": "Q1.qdrv", "offset": 0}]}
    cal = CalibrationSet.from_dict(doc)
    ir = resolve_gates(parse_circuit('{"gate": "CR", "qubits": ["Q0", "Q1"]}'), cal, channels)
    a, b = ir.body[0].pulses
    assert (a.channel, a.freq) == ("Q0.qdrv", 4.9e9)
    assert (b.channel, b.freq) == ("Q1.qdrv", 4.9e9)


def test_calibration_validation():
    doc = json.loads(json.dumps(CAL_DOC))
    doc["qubits"]["Q0"]["gates"]["X90"][0]["env"] = "nope"
    with pytest.raises(CalibrationError, match="undefined envelope 'nope'"):
        CalibrationSet.from_dict(doc)


# -- virtual Z -------------------------------------------------------------------

def phases(ir):
    return [p.phase for _, p in iter_pulses(ir.body) if p.channel.endswith("qdrv")]


def test_vz_identity_without_statements(cal, channels):
    ir = resolve_gates(parse_circuit(demo_path("fast_reset.circ").read_text()), cal, channels)
    assert apply_virtual_z(ir).body == ir.body


def test_vz_adds_phase(cal, channels):
    ir = resolve_gates(parse_circuit(lines({"virtual_z": "Q0", "phase": math.pi / 2},
                                           {"gate": "X90", "qubit": "Q0"})), cal, channels)
    out = apply_virtual_z(ir)
    assert phases(out) == [pytest.approx(X90.get("phase", 0.0) + math.pi / 2)]
    assert not any(isinstance(n, IrVirtualZ) for n in iter_nodes(out.body))


def test_vz_running_sum(cal, channels):
    ir = resolve_gates(parse_circuit(lines(
        {"virtual_z": "Q0", "phase": math.pi / 3}, {"gate": "X90", "qubit": "Q0"},
        {"virtual_z": "Q0", "phase": math.pi / 3}, {"gate": "X90", "qubit": "Q0"})), cal, channels)
    acc, expect = 0.0, []
    for step in (math.pi / 3, math.pi / 3):
        acc += step
        expect.append(acc % (2 * math.pi))
    assert phases(apply_virtual_z(ir)) == pytest.approx(expect)


def test_vz_wraps_mod_2pi(cal, channels):
    ir = resolve_gates(parse_circuit(lines({"virtual_z": "Q0", "phase": 7.0}, {"gate": "X90", "qubit": "Q0"})),
                       cal, channels)
    assert phases(apply_virtual_z(ir)) == [pytest.approx(7.0 - 2 * math.pi)]


def test_vz_other_qubit_and_readout_untouched(cal, channels):
    ir = resolve_gates(parse_circuit(lines({"virtual_z": "Q1", "phase": 1.0}, {"gate": "X90", "qubit": "Q0"},
                                           {"measure": "Q1", "result": "m"})), cal, channels)
    out = apply_virtual_z(ir)
    assert all(p.phase == 0.0 for _, p in iter_pulses(out.body))


def test_vz_arm_mismatch(cal, channels):
    src = lines({"measure": "Q0", "result": "m"},
                {"if": "m", "then": [{"virtual_z": "Q0", "phase": 1.0}], "else": []})
    with pytest.raises(CompileError, match="different virtual phases"):
        apply_virtual_z(resolve_gates(parse_circuit(src), cal, channels))


# -- scheduling ------------------------------------------------------------------

def scheduled(src, cal, channels, mapping=None, feedback=FEEDBACK):
    ir = apply_virtual_z(resolve_gates(parse_circuit(src), cal, channels))
    return schedule(ir, channels, mapping, feedback)


def ops(ir):
    return [n for n in iter_nodes(ir.body) if isinstance(n, IrOp)]


def test_sequential_x90(cal, channels):
    ir = scheduled(lines({"gate": "X90", "qubit": "Q0"}, {"gate": "X90", "qubit": "Q0"}), cal, channels)
    assert [op.start for op in ops(ir)] == [0, X90_TICKS]


def test_parallel_x90(cal, channels):
    ir = scheduled(lines({"gate": "X90", "qubit": "Q0"}, {"gate": "X90", "qubit": "Q1"}), cal, channels)
    assert [op.start for op in ops(ir)] == [0, 0]


def test_conditional_block_timing(cal, channels):
    ir = scheduled(demo_path("conditional_flip.circ").read_text(), cal, channels)
    measure = ops(ir)[1]
    branch = next(n for n in ir.body if isinstance(n, IrBranch))
    expect = measure.start + WINDOW + FEEDBACK
    assert branch.start == expect
    then_ops = [n for n in branch.then if isinstance(n, IrOp)]
    assert then_ops[0].start == expect
    assert branch.end == expect + 2 * X90_TICKS
    final = ops(ir)[-1]
    assert final.start == branch.end


def test_feedback_latency_configurable(cal, channels):
    src = demo_path("fast_reset.circ").read_text()
    a = next(n for n in scheduled(src, cal, channels, feedback=64).body if isinstance(n, IrBranch))
    b = next(n for n in scheduled(src, cal, channels, feedback=200).body if isinstance(n, IrBranch))
    assert b.start - a.start == 136


def test_arms_padded_to_equal_end(cal, channels):
    src = lines({"measure": "Q0", "result": "m"},
                {"if": "m", "then": [{"gate": "X90", "qubit": "Q0"}, {"gate": "X90", "qubit": "Q0"}],
                 "else": [{"gate": "X90", "qubit": "Q0"}]},
                {"gate": "X90", "qubit": "Q0"})
    ir = scheduled(src, cal, channels)
    branch = ir.body[1]
    assert branch.end - branch.start == 2 * X90_TICKS
    assert ir.body[2].start == branch.end


def test_same_core_pulses_spaced(cal, channels):
    ir = scheduled(lines({"gate": "X90", "qubit": "Q0"}, {"gate": "X90", "qubit": "Q1"}), cal, channels,
                   mapping={"Q0": 0, "Q1": 0})
    assert [op.start for op in ops(ir)] == [0, 4]


def test_missing_mapping(cal, channels):
    with pytest.raises(CompileError, match="missing from mapping: Q1"):
        scheduled(lines({"gate": "X90", "qubit": "Q1"}), cal, channels, mapping={"Q0": 0})


def test_delay_and_barrier(cal, channels):
    ir = scheduled(lines({"gate": "X90", "qubit": "Q0"}, {"delay": ["Q0"], "ticks": 10},
                         {"barrier": []}, {"gate": "X90", "qubit": "Q1"}), cal, channels)
    assert ops(ir)[1].start == X90_TICKS + 10


# -- per-core split --------------------------------------------------------------

def test_split_single_qubit_identity(cal, channels):
    ir = scheduled(lines({"gate": "X90", "qubit": "Q0"}, {"gate": "X90", "qubit": "Q0"}), cal, channels)
    progs = split_per_core(ir, {"Q0": 0}, channels)
    assert list(progs) == [0]
    items = progs[0].items
    assert items[0] == SyncCores(0, (0,)) and items[-1] == Stop()
    stream = [TimedPulse(p.start, p.channel, p.freq, p.phase, p.amp, p.env, p.length) for _, p in iter_pulses(ir.body)]
    assert items[1:-1] == stream


def test_split_conditional_flip(cal, channels, mapping):
    ir = scheduled(demo_path("conditional_flip.circ").read_text(), cal, channels, mapping)
    progs = split_per_core(ir, mapping, channels)
    q1 = progs[mapping["Q1"]].items
    branch = next(it for it in q1 if isinstance(it, BranchOnResult))
    assert branch.fproc_id == ir.fproc_of["m0"] and branch.value == 1
    assert any(isinstance(it, Goto) for it in q1) and any(isinstance(it, Label) for it in q1)
    q0 = progs[mapping["Q0"]].items
    assert not any(isinstance(it, BranchOnResult) for it in q0)
    assert all(isinstance(it, SyncCores) and it.cores == (0, 1) for it in (q0[0], q1[0]))


def test_split_merge_two_qubits_one_core(cal, channels):
    mapping = {"Q0": 0, "Q1": 0}
    src = lines({"gate": "X90", "qubit": "Q0"}, {"gate": "X90", "qubit": "Q1"}, {"gate": "X90", "qubit": "Q0"},
                {"measure": "Q1", "result": "a"}, {"gate": "X90", "qubit": "Q1"})
    ir = scheduled(src, cal, channels, mapping)
    progs = split_per_core(ir, mapping, channels)
    assert list(progs) == [0]
    got = [(it.time, it.channel) for it in progs[0].pulses()]
    assert got == sorted((p.start, p.channel) for _, p in iter_pulses(ir.body))


def test_split_requires_schedule(cal, channels):
    ir = resolve_gates(parse_circuit('{"gate": "X90", "qubit": "Q0"}'), cal, channels)
    with pytest.raises(CompileError):
        split_per_core(ir, None, channels)


def test_pulse_program_json_roundtrip(cal, channels, mapping):
    compiled = compile_circuit(demo_path("fast_reset.circ").read_text(), cal, channels, mapping)
    text = programs_to_json(compiled.programs, cal.envelopes)
    progs, envs = programs_from_json(text)
    assert {k: v.items for k, v in progs.items()} == {k: v.items for k, v in compiled.programs.items()}
    assert envs == cal.envelopes


def test_feedback_shorter_than_result_path(channels):
    doc = json.loads(json.dumps(CAL_DOC))
    doc["feedback_latency_ticks"] = 8
    with pytest.raises(CompileError, match="feedback latency"):
        compile_circuit('{"gate": "X90", "qubit": "Q0"}', CalibrationSet.from_dict(doc), channels)


# -- properties over random circuits ---------------------------------------------

prop = settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def qubit_sequences(ir):
    seq = {}
    for op in ops(ir):
        for q in op.qubits:
            seq.setdefault(q, []).append(op)
    return seq


def check_straight_line_order(body, seq_check):
    """Per-qubit program order is respected within every block."""
    last = {}
    for node in body:
        if isinstance(node, IrOp):
            for q in node.qubits:
                if q in last:
                    seq_check(last[q], node)
                last[q] = node
        elif isinstance(node, IrBranch):
            for q in node.qubits:
                if q in last:
                    assert node.start >= last[q].start + last[q].duration
            for arm in (node.then, node.orelse):
                check_straight_line_order(arm, seq_check)
                for n in arm:
                    if isinstance(n, IrOp):
                        assert n.start >= node.start
                        assert n.start + n.duration <= node.end
            for q in node.qubits:
                last.pop(q, None)


@prop
@given(circuits())
def test_schedule_preserves_qubit_order(cal, channels, src):
    ir = scheduled(src, cal, channels)

    def ordered(a, b):
        assert b.start >= a.start + a.duration

    check_straight_line_order(ir.body, ordered)
    assert all(p.start >= 0 for _, p in iter_pulses(ir.body))


def exclusive_paths(body):
    """All execution paths as lists of pulses (arms are exclusive)."""
    paths = [[]]
    for node in body:
        if isinstance(node, IrOp):
            for path in paths:
                path.extend(node.pulses)
        elif isinstance(node, IrBranch):
            new = []
            for path in paths:
                for arm in exclusive_paths(node.then) + exclusive_paths(node.orelse):
                    new.append(path + arm)
            paths = new[:64]
    return paths


@prop
@given(circuits())
def test_no_channel_overlap(cal, channels, src):
    ir = scheduled(src, cal, channels)
    for path in exclusive_paths(ir.body):
        by_chan = {}
        for p in path:
            by_chan.setdefault(p.channel, []).append((p.start, channels.ticks(p.channel, p.length)))
        for spans in by_chan.values():
            spans.sort()
            for (s0, d0), (s1, _) in zip(spans, spans[1:]):
                assert s0 + d0 <= s1


@prop
@given(circuits())
def test_vz_commutes_with_schedule(cal, channels, src):
    base = resolve_gates(parse_circuit(src), cal, channels)
    a = schedule(apply_virtual_z(base), channels)
    b = apply_virtual_z(schedule(base, channels))
    pa = [(p.channel, p.start, p.phase) for _, p in iter_pulses(a.body)]
    pb = [(p.channel, p.start, p.phase) for _, p in iter_pulses(b.body)]
    assert pa == pb


@prop
@given(circuits())
def test_arms_equal_duration(cal, channels, src):
    ir = scheduled(src, cal, channels)
    for node in iter_nodes(ir.body):
        if isinstance(node, IrBranch):
            for arm in (node.then, node.orelse):
                for n in iter_nodes(arm):
                    if isinstance(n, IrOp):
                        assert node.start <= n.start and n.start + n.duration <= node.end


@prop
@given(circuits())
def test_split_content_preserving(cal, channels, src):
    ir = scheduled(src, cal, channels)
    progs = split_per_core(ir, None, channels)
    key = lambda c, t, f, ph, a, e, n: (c, t, f, ph, a, e, n)  # noqa: E731
    want = Counter(key(p.channel, p.start, p.freq, p.phase, p.amp, p.env, p.length) for _, p in iter_pulses(ir.body))
    got = Counter(key(t.channel, t.time, t.freq, t.phase, t.amp, t.env, t.length)
                  for prog in progs.values() for t in prog.pulses())
    assert got == want
    for k, prog in progs.items():
        for t in prog.pulses():
            assert channels.core_of(t.channel, {q: i for i, q in enumerate(ir.qubits)}) == k
