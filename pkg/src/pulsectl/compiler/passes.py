"""Compiler passes: gate resolution, virtual phases, scheduling, per-core split."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from ..channels import ChannelConfig, ConfigError
from ..emulator import BRANCH_LATENCY, JUMP_LATENCY, PULSE_LATENCY
from .calibration import CalibrationSet
from .circuit import Barrier, CircuitProgram, Delay, Gate, IfElse, Measure, RawPulse, VirtualZ, walk
from .ir import (
    BranchOnResult, CompileError, Goto, IrBarrier, IrBranch, IrDelay, IrOp, IrProgram, IrPulse,
    IrVirtualZ, Label, MeasureTag, PulseProgram, Stop, SyncCores, TimedPulse, iter_nodes, iter_pulses,
)

TWO_PI = 2 * math.pi


def _channel_name(channels: ChannelConfig | None, qubit: str, role: str) -> str:
    if channels is None:
        return f"{qubit}.{role}"
    try:
        return channels.find(qubit, role).name
    except ConfigError as exc:
        raise CompileError(str(exc)) from None


def _drive_owner(channels: ChannelConfig | None, name: str, qubits) -> str | None:
    """Qubit whose drive phase frame a pulse on ``name`` belongs to, if any."""
    if channels is not None:
        if name not in channels:
            raise CompileError(f"unmapped destination channel {name!r}")
        ch = channels[name]
        return ch.qubit if ch.role == "qdrv" else None
    q, _, role = name.rpartition(".")
    return q if role == "qdrv" and q in qubits else None


def _channel_qubit(channels: ChannelConfig | None, name: str) -> str | None:
    if channels is not None:
        return channels[name].qubit if name in channels else None
    q, _, _ = name.rpartition(".")
    return q or None


# -- gate resolution -----------------------------------------------------------

def resolve_gates(prog: CircuitProgram, cal: CalibrationSet, channels: ChannelConfig | None = None) -> IrProgram:
    """Replace gates and measurements with calibrated pulses.

    Each measurement gets its own function-processor id, numbered in program
    order. Without a channel config, destinations follow the ``<qubit>.<role>``
    naming convention.
    """
    all_qubits = prog.qubits
    for q in all_qubits:
        cal.qubit(q)
    fproc_of: dict[str, int] = {}
    measured: dict[str, str] = {}

    def length_of(env: str, length: int | None) -> int:
        n = cal.envelope(env).length
        if length is not None and length != n:
            raise CompileError(f"length {length} does not match envelope {env!r} ({n} samples)")
        return n

    def lower(statements) -> tuple:
        out = []
        for st in statements:
            if isinstance(st, Gate):
                pulses = []
                for t in cal.gate_templates(st.name, st.qubits):
                    q = st.qubits[0]
                    dest = t.dest or _channel_name(channels, q, t.role)
                    owner = _channel_qubit(channels, dest) or q
                    qc = cal.qubit(owner) if owner in cal.qubits else cal.qubit(q)
                    role = channels[dest].role if channels is not None and dest in channels else t.role
                    freq = t.freq if t.freq is not None else (qc.drive_freq if role == "qdrv" else qc.readout.freq)
                    pulses.append(IrPulse(dest, freq, t.phase, t.amp, t.env, length_of(t.env, t.length),
                                          _drive_owner(channels, dest, all_qubits), t.offset))
                out.append(IrOp(f"{st.name} {','.join(st.qubits)}", st.qubits, tuple(pulses)))
            elif isinstance(st, RawPulse):
                owner = _channel_qubit(channels, st.dest)
                if channels is not None and st.dest not in channels:
                    raise CompileError(f"unmapped destination channel {st.dest!r}")
                p = IrPulse(st.dest, st.freq, st.phase, st.amp, st.env, length_of(st.env, st.length),
                            _drive_owner(channels, st.dest, all_qubits))
                qubits = (owner,) if owner in all_qubits else ()
                out.append(IrOp(f"pulse {st.dest}", qubits, (p,), kind="pulse"))
            elif isinstance(st, VirtualZ):
                out.append(IrVirtualZ(st.qubit, st.phase))
            elif isinstance(st, Measure):
                rc = cal.qubit(st.qubit).readout
                fid = len(fproc_of)
                fproc_of[st.result] = fid
                measured[st.result] = st.qubit
                drive = IrPulse(_channel_name(channels, st.qubit, "rdrv"), rc.freq, rc.phase, rc.amp, rc.env,
                                length_of(rc.env, None), None, 0)
                demod = IrPulse(_channel_name(channels, st.qubit, "rdlo"), rc.freq, rc.demod_phase, rc.amp,
                                rc.demod_env, length_of(rc.demod_env, None), None, rc.demod_delay_ticks)
                out.append(IrOp(f"measure {st.qubit} -> {st.result}", (st.qubit,), (drive, demod),
                                kind="measure", min_duration=rc.window_ticks, result=st.result, fproc_id=fid))
            elif isinstance(st, Barrier):
                out.append(IrBarrier(st.qubits or all_qubits))
            elif isinstance(st, Delay):
                out.append(IrDelay(st.qubits or all_qubits, st.ticks))
            elif isinstance(st, IfElse):
                then = lower(st.then)
                orelse = lower(st.orelse)
                out.append(IrBranch(st.result, st.value, fproc_of[st.result], then, orelse))
            else:
                raise CompileError(f"unsupported statement {st!r}")
        return tuple(out)

    body = lower(prog.statements)
    results = tuple(st.result for st in walk(prog.statements) if isinstance(st, Measure))
    return IrProgram(body, all_qubits, results, fproc_of, measured)


# -- virtual Z -----------------------------------------------------------------

def _phase_eq(a: float, b: float) -> bool:
    d = (a - b) % TWO_PI
    return min(d, TWO_PI - d) < 1e-12


def apply_virtual_z(ir: IrProgram) -> IrProgram:
    """Fold VirtualZ nodes into the phase of later drive pulses on the same qubit."""

    def visit(body, acc: dict[str, float]) -> tuple[tuple, dict[str, float]]:
        out = []
        for node in body:
            if isinstance(node, IrVirtualZ):
                acc[node.qubit] = acc.get(node.qubit, 0.0) + node.phase
            elif isinstance(node, IrOp):
                pulses = tuple(
                    replace(p, phase=(p.phase + acc[p.vz_qubit]) % TWO_PI)
                    if p.vz_qubit is not None and acc.get(p.vz_qubit, 0.0) != 0.0 else p
                    for p in node.pulses)
                out.append(replace(node, pulses=pulses))
            elif isinstance(node, IrBranch):
                then, acc_t = visit(node.then, dict(acc))
                orelse, acc_e = visit(node.orelse, dict(acc))
                for q in set(acc_t) | set(acc_e):
                    if not _phase_eq(acc_t.get(q, 0.0), acc_e.get(q, 0.0)):
                        raise CompileError(f"if/else arms leave different virtual phases on {q}")
                acc = acc_t
                out.append(replace(node, then=then, orelse=orelse))
            else:
                out.append(node)
        return tuple(out), acc

    body, _ = visit(ir.body, {})
    return ir.with_body(body, phases_applied=True)


# -- scheduling ----------------------------------------------------------------

@dataclass
class _State:
    ready: dict[str, int] = field(default_factory=dict)
    chan: dict[str, int] = field(default_factory=dict)
    core_free: dict[int, int] = field(default_factory=dict)
    avail: dict[str, int] = field(default_factory=dict)

    def copy(self) -> "_State":
        return _State(dict(self.ready), dict(self.chan), dict(self.core_free), dict(self.avail))


def _body_qubits(body) -> set[str]:
    qs: set[str] = set()
    for node in iter_nodes(body):
        if isinstance(node, (IrOp, IrBarrier, IrDelay)):
            qs.update(node.qubits)
        elif isinstance(node, IrVirtualZ):
            qs.add(node.qubit)
    return qs


class _Scheduler:
    def __init__(self, ir: IrProgram, channels: ChannelConfig, mapping: dict[str, int], feedback_latency: int):
        self.ir = ir
        self.channels = channels
        self.mapping = mapping
        self.feedback = feedback_latency

    def core(self, channel: str) -> int:
        try:
            return self.channels.core_of(channel, self.mapping)
        except ConfigError as exc:
            raise CompileError(str(exc)) from None

    def op(self, node: IrOp, st: _State) -> IrOp:
        ends: dict[str, int] = {}
        placed = []
        for p in node.pulses:
            d = self.channels.ticks(p.channel, p.length)
            off = p.offset if p.offset is not None else ends.get(p.channel, 0)
            if off < ends.get(p.channel, 0):
                raise CompileError(f"{node.label}: pulses overlap on {p.channel}")
            ends[p.channel] = off + d
            placed.append((p, off, d, self.core(p.channel)))
        by_core: dict[int, list[int]] = {}
        for _, off, _, k in placed:
            by_core.setdefault(k, []).append(off)
        for k, offs in by_core.items():
            offs.sort()
            if any(b - a < PULSE_LATENCY for a, b in zip(offs, offs[1:])):
                raise CompileError(f"{node.label}: pulses on core {k} closer than {PULSE_LATENCY} ticks")
        extent = max((off + d for _, off, d, _ in placed), default=0)
        duration = max(extent, node.min_duration)
        start = max([0] + [st.ready.get(q, 0) for q in node.qubits]
                    + [st.chan.get(p.channel, 0) - off for p, off, _, _ in placed]
                    + [st.core_free.get(k, 0) - off for _, off, _, k in placed])
        pulses = []
        for p, off, d, k in placed:
            t = start + off
            pulses.append(replace(p, offset=off, start=t))
            st.chan[p.channel] = max(st.chan.get(p.channel, 0), t + d)
            st.core_free[k] = max(st.core_free.get(k, 0), t + PULSE_LATENCY)
        for q in node.qubits:
            st.ready[q] = start + duration
        if node.result is not None:
            st.avail[node.result] = start + duration
        return replace(node, pulses=tuple(pulses), start=start, duration=duration)

    def branch(self, node: IrBranch, st: _State) -> IrBranch:
        arm_pulses = [p for arm in (node.then, node.orelse) for _, p in iter_pulses(arm)]
        cores = sorted({self.core(p.channel) for p in arm_pulses})
        block = _body_qubits(node.then) | _body_qubits(node.orelse)
        block |= {q for q in self.ir.qubits if self.mapping.get(q) in cores}
        block = sorted(block)
        if node.result not in st.avail:
            raise CompileError(f"result {node.result!r} is not available at its if")
        t0 = max([st.avail[node.result] + self.feedback]
                 + [st.ready.get(q, 0) for q in block]
                 + [st.core_free.get(k, 0) + BRANCH_LATENCY for k in cores])
        arms = []
        states = []
        for arm in (node.then, node.orelse):
            s = st.copy()
            for q in block:
                s.ready[q] = t0
            for k in cores:
                s.core_free[k] = t0
            arms.append(self.body(arm, s))
            states.append(s)
        s_then, s_else = states
        end = max([t0] + [s.ready.get(q, 0) for s in states for q in block])
        for q in block:
            st.ready[q] = end
        for ch in set(s_then.chan) | set(s_else.chan):
            st.chan[ch] = max(s_then.chan.get(ch, 0), s_else.chan.get(ch, 0))
        for k in cores:
            st.core_free[k] = max(s_then.core_free[k], s_else.core_free[k] + JUMP_LATENCY)
        return replace(node, then=arms[0], orelse=arms[1], qubits=tuple(block), start=t0, end=end)

    def body(self, body, st: _State) -> tuple:
        out = []
        for node in body:
            if isinstance(node, IrOp):
                out.append(self.op(node, st))
            elif isinstance(node, IrBranch):
                out.append(self.branch(node, st))
            elif isinstance(node, IrBarrier):
                t = max([st.ready.get(q, 0) for q in node.qubits], default=0)
                for q in node.qubits:
                    st.ready[q] = t
                out.append(node)
            elif isinstance(node, IrDelay):
                t = max([st.ready.get(q, 0) for q in node.qubits], default=0)
                for q in node.qubits:
                    st.ready[q] = t + node.ticks
                out.append(node)
            elif isinstance(node, IrVirtualZ):
                out.append(node)
            else:
                raise CompileError(f"internal error: unexpected IR node {node!r}")
        return tuple(out)


def schedule(ir: IrProgram, channels: ChannelConfig, mapping: dict[str, int] | None = None,
             feedback_latency: int = 64) -> IrProgram:
    """ASAP schedule in qclk ticks.

    Besides qubit and channel readiness, pulses issued by one core are kept at
    least one Pulse latency apart, and a conditional block starts no earlier
    than ``feedback_latency`` ticks after its measurement window ends. Both
    arms start together; every qubit in the block is ready again only when
    the longer arm has finished.
    """
    mapping = _check_mapping(ir, mapping)
    body = _Scheduler(ir, channels, mapping, feedback_latency).body(ir.body, _State())
    return ir.with_body(body, scheduled=True)


def _check_mapping(ir: IrProgram, mapping: dict[str, int] | None) -> dict[str, int]:
    if mapping is None:
        return {q: i for i, q in enumerate(ir.qubits)}
    missing = [q for q in ir.qubits if q not in mapping]
    if missing:
        raise CompileError(f"qubit(s) missing from mapping: {', '.join(missing)}")
    return dict(mapping)


def arm_durations(node: IrBranch) -> tuple[int, int]:
    """Padded durations of both arms; equal by construction."""
    return node.end - node.start, node.end - node.start


# -- per-core split ------------------------------------------------------------

def split_per_core(ir: IrProgram, mapping: dict[str, int] | None, channels: ChannelConfig) -> dict[int, PulseProgram]:
    """One pulse-level program per participating core, timestamps unchanged."""
    if not ir.scheduled:
        raise CompileError("split_per_core needs a scheduled IR")
    mapping = _check_mapping(ir, mapping)

    def core(ch: str) -> int:
        try:
            return channels.core_of(ch, mapping)
        except ConfigError as exc:
            raise CompileError(str(exc)) from None

    cores = sorted({core(p.channel) for _, p in iter_pulses(ir.body)} | {mapping[q] for q in ir.qubits})
    if cores and cores[-1] >= 32:
        raise CompileError("core ids must be below 32 to fit a sync mask")
    programs = {k: PulseProgram(k, [SyncCores(0, tuple(cores))]) for k in cores}
    counter = [0]

    def timed(op: IrOp, p: IrPulse) -> TimedPulse:
        tag = None
        if op.kind == "measure" and channels[p.channel].role == "rdlo":
            tag = MeasureTag(op.result, op.fproc_id, op.qubits[0])
        return TimedPulse(p.start, p.channel, p.freq, p.phase, p.amp, p.env, p.length, tag)

    def emit(body, k: int, out: list) -> None:
        segment: list[TimedPulse] = []

        def flush():
            segment.sort(key=lambda tp: tp.time)
            out.extend(segment)
            segment.clear()

        for node in body:
            if isinstance(node, IrOp):
                segment.extend(timed(node, p) for p in node.pulses if core(p.channel) == k)
            elif isinstance(node, IrBranch):
                if not any(core(p.channel) == k for arm in (node.then, node.orelse) for _, p in iter_pulses(arm)):
                    continue
                flush()
                n = counter[0]
                counter[0] += 1
                l_then, l_end = f"then_{n}", f"end_{n}"
                out.append(BranchOnResult(node.fproc_id, node.value, l_then))
                emit(node.orelse, k, out)
                out.append(Goto(l_end))
                out.append(Label(l_then))
                emit(node.then, k, out)
                out.append(Label(l_end))
        flush()

    for k in cores:
        counter[0] = 0
        emit(ir.body, k, programs[k].items)
        programs[k].items.append(Stop())
    return programs
