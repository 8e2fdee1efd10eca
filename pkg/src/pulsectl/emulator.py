"""Cycle-accurate lockstep emulator for the distributed processor.

Every core issues one instruction at a time and retires it after a fixed
latency (in 500 MHz DSP cycles)::

    Pulse        >= 4, and never before qclk reaches the command time
    AluOp, Jump  4
    BranchAlu    5
    ReadFproc    5 once a result is available
    BranchFproc  5 once a result is available
    Sync         5 for the last core to arrive
    Halt         4

An instruction issued at cycle ``s`` with latency ``L`` retires at the end of
cycle ``s + L - 1``; the next instruction issues at ``s + L``. Pulses are
emitted in the cycle where the core's qclk equals the command time. A sync
barrier releases in the cycle the last participant arrives; the released
cores issue their next instruction one cycle later with qclk = 0.

Function-processor results are broadcast per fproc id: every core keeps its
own read position in each id's FIFO, so several cores may branch on the
same measurement.
"""

from __future__ import annotations

import csv
import enum
import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .isa import (
    NUM_REGISTERS,
    AluOp,
    BranchAlu,
    BranchFproc,
    DstKind,
    Halt,
    Instruction,
    Jump,
    Pulse,
    PulseCommand,
    ReadFproc,
    Sync,
    alu_eval,
    wrap_int32,
)

PULSE_LATENCY = 4
ALU_LATENCY = 4
JUMP_LATENCY = 4
BRANCH_LATENCY = 5
FPROC_LATENCY = 5
SYNC_LATENCY = 5
HALT_LATENCY = 4

QCLK_MASK = (1 << 64) - 1


class EmulatorError(RuntimeError):
    pass


class PulseLate(EmulatorError):
    def __init__(self, core: int, pc: int, cycle: int, time: int, qclk: int):
        self.core, self.pc, self.cycle, self.time, self.qclk = core, pc, cycle, time, qclk
        super().__init__(f"core {core} pc {pc}: pulse for qclk {time} issued at qclk {qclk} (cycle {cycle})")


class PcOutOfBounds(EmulatorError):
    def __init__(self, core: int, pc: int, cycle: int):
        self.core, self.pc, self.cycle = core, pc, cycle
        super().__init__(f"core {core}: pc {pc} outside program (cycle {cycle})")


class Deadlock(EmulatorError):
    def __init__(self, cycle: int, blocked: list[tuple[int, str]]):
        self.cycle = cycle
        self.blocked = blocked
        detail = ", ".join(f"core {c} ({why})" for c, why in blocked)
        super().__init__(f"deadlock at cycle {cycle}: {detail}")


class Status(enum.Enum):
    RUNNING = "running"
    WAITING_FPROC = "waiting_fproc"
    WAITING_SYNC = "waiting_sync"
    HALTED = "halted"


@dataclass
class CoreState:
    core_id: int
    program: Sequence[Instruction]
    pc: int = 0
    regs: list[int] = field(default_factory=lambda: [0] * NUM_REGISTERS)
    qclk: int = 0
    status: Status = Status.RUNNING
    busy_until: int = 0
    # in-flight instruction
    instr: Instruction | None = None
    issued_at: int = 0
    emitted: bool = False
    fproc_value: int | None = None
    value_at: int = 0
    arrived: bool = False

    @property
    def waiting_on(self):
        if self.status is Status.WAITING_FPROC:
            return ("fproc", self.instr.fproc_id)
        if self.status is Status.WAITING_SYNC:
            return ("sync", self.instr.barrier_id)
        return None


@dataclass(frozen=True)
class PulseEvent:
    cycle: int
    core: int
    pc: int
    channel: int
    qclk: int
    cmd: PulseCommand


@dataclass(frozen=True)
class Retirement:
    core: int
    pc: int
    kind: str
    issued: int
    retired: int
    waited: int = 0  # cycles stalled on an fproc value or a barrier

    @property
    def latency(self) -> int:
        return self.retired - self.issued + 1

    @property
    def own_latency(self) -> int:
        return self.latency - self.waited


@dataclass
class RunResult:
    status: str  # "halted" or "budget"
    cycles: int
    events: list[PulseEvent]


EventHook = Callable[["Machine", PulseEvent], None]


class Machine:
    def __init__(self, programs: Mapping[int, Sequence[Instruction]], *, trace: bool = False,
                 on_event: EventHook | None = None):
        self.programs = {int(k): list(v) for k, v in programs.items()}
        self.trace = trace
        self.on_event = on_event
        self.reset()

    def reset(self) -> None:
        self.cores = [CoreState(cid, prog) for cid, prog in sorted(self.programs.items())]
        self._by_id = {c.core_id: c for c in self.cores}
        self.cycle = 0
        self.events: list[PulseEvent] = []
        self.retired: list[Retirement] = []
        self.mailboxes: dict[int, list[int]] = {}
        self._cursor: dict[tuple[int, int], int] = {}
        self.barriers: dict[int, dict] = {}
        self._pending: list[tuple[int, int, int, int]] = []
        self._seq = 0
        self.release_log: list[tuple[int, int, tuple[int, ...]]] = []

    def core(self, core_id: int) -> CoreState:
        return self._by_id[core_id]

    @property
    def halted(self) -> bool:
        return all(c.status is Status.HALTED for c in self.cores)

    # -- function processor ------------------------------------------------

    def deliver_fproc(self, fproc_id: int, value: int) -> None:
        self.mailboxes.setdefault(fproc_id, []).append(wrap_int32(value))

    def schedule_delivery(self, cycle: int, fproc_id: int, value: int) -> None:
        """Deliver ``value`` at the start of global cycle ``cycle``."""
        heapq.heappush(self._pending, (cycle, self._seq, fproc_id, value))
        self._seq += 1

    def _has_value(self, core: CoreState, fproc_id: int) -> bool:
        return self._cursor.get((core.core_id, fproc_id), 0) < len(self.mailboxes.get(fproc_id, ()))

    def _pop(self, core: CoreState, fproc_id: int) -> int | None:
        key = (core.core_id, fproc_id)
        pos = self._cursor.get(key, 0)
        box = self.mailboxes.get(fproc_id, ())
        if pos >= len(box):
            return None
        self._cursor[key] = pos + 1
        return box[pos]

    # -- execution ---------------------------------------------------------

    def _retire(self, core: CoreState, c: int, next_pc: int) -> None:
        if self.trace:
            instr = core.instr
            if isinstance(instr, (ReadFproc, BranchFproc)):
                waited = max(0, core.value_at - core.issued_at)
            elif isinstance(instr, Sync):
                waited = c - (core.issued_at + SYNC_LATENCY - 1)
            else:
                waited = 0
            self.retired.append(Retirement(core.core_id, core.pc, type(instr).__name__, core.issued_at, c, waited))
        core.pc = next_pc
        core.instr = None
        core.status = Status.RUNNING

    def _issue(self, core: CoreState, c: int) -> None:
        if not 0 <= core.pc < len(core.program):
            raise PcOutOfBounds(core.core_id, core.pc, c)
        instr = core.program[core.pc]
        core.instr = instr
        core.issued_at = c
        core.emitted = False
        core.fproc_value = None
        core.arrived = False
        if isinstance(instr, Pulse):
            if instr.time < core.qclk:
                raise PulseLate(core.core_id, core.pc, c, instr.time, core.qclk)
            core.busy_until = max(c + PULSE_LATENCY - 1, c + instr.time - core.qclk)
        elif isinstance(instr, AluOp):
            core.busy_until = c + ALU_LATENCY - 1
        elif isinstance(instr, Jump):
            core.busy_until = c + JUMP_LATENCY - 1
        elif isinstance(instr, BranchAlu):
            core.busy_until = c + BRANCH_LATENCY - 1
        elif isinstance(instr, Halt):
            core.busy_until = c + HALT_LATENCY - 1
        elif isinstance(instr, Sync):
            core.busy_until = c + SYNC_LATENCY - 1
        else:
            core.busy_until = -1  # fproc: unknown until the value arrives

    def _operand(self, core: CoreState, instr) -> int:
        return instr.rhs if instr.rhs_imm else core.regs[instr.rhs]

    def _tick(self, core: CoreState, c: int, emitted: list[PulseEvent]) -> None:
        if core.instr is None:
            self._issue(core, c)
        instr = core.instr

        if isinstance(instr, Pulse):
            if not core.emitted and core.qclk == instr.time:
                ev = PulseEvent(c, core.core_id, core.pc, instr.channel, core.qclk, instr.cmd)
                core.emitted = True
                self.events.append(ev)
                emitted.append(ev)
                if self.on_event is not None:
                    self.on_event(self, ev)
            if core.emitted and c >= core.issued_at + PULSE_LATENCY - 1:
                self._retire(core, c, core.pc + 1)
        elif isinstance(instr, (ReadFproc, BranchFproc)):
            if core.fproc_value is None:
                value = self._pop(core, instr.fproc_id)
                if value is None:
                    core.status = Status.WAITING_FPROC
                    return
                core.fproc_value, core.value_at = value, c
                core.status = Status.RUNNING
                core.busy_until = max(core.issued_at, c) + FPROC_LATENCY - 1
            if c >= core.busy_until:
                if isinstance(instr, ReadFproc):
                    core.regs[instr.dst] = core.fproc_value
                    self._retire(core, c, core.pc + 1)
                else:
                    taken = core.fproc_value == instr.value
                    self._retire(core, c, instr.target if taken else core.pc + 1)
        elif isinstance(instr, Sync):
            if not core.arrived and c >= core.busy_until:
                core.arrived = True
                core.status = Status.WAITING_SYNC
                entry = self.barriers.setdefault(instr.barrier_id, {"arrived": set(), "mask": 0})
                entry["arrived"].add(core.core_id)
                entry["mask"] |= instr.core_mask
        elif c >= core.busy_until:
            if isinstance(instr, AluOp):
                result = alu_eval(instr.op, core.regs[instr.lhs], self._operand(core, instr))
                kind = DstKind(instr.dst_kind)
                if kind == DstKind.REG:
                    core.regs[instr.dst] = result
                    self._retire(core, c, core.pc + 1)
                elif kind == DstKind.QCLK:
                    core.qclk = (core.qclk + result) & QCLK_MASK
                    self._retire(core, c, core.pc + 1)
                else:
                    self._retire(core, c, result)
            elif isinstance(instr, Jump):
                self._retire(core, c, instr.target)
            elif isinstance(instr, BranchAlu):
                taken = alu_eval(instr.op, core.regs[instr.lhs], self._operand(core, instr)) != 0
                self._retire(core, c, instr.target if taken else core.pc + 1)
            elif isinstance(instr, Halt):
                self._retire(core, c, core.pc)
                core.status = Status.HALTED

    def _release_barriers(self, c: int) -> list[CoreState]:
        released = []
        for bid in list(self.barriers):
            entry = self.barriers[bid]
            mask = entry["mask"]
            members = {i for i in range(mask.bit_length()) if mask >> i & 1}
            if members <= entry["arrived"]:
                for cid in sorted(entry["arrived"]):
                    core = self._by_id[cid]
                    self._retire(core, c, core.pc + 1)
                    released.append(core)
                self.release_log.append((c, bid, tuple(sorted(entry["arrived"]))))
                del self.barriers[bid]
        return released

    def step(self) -> list[PulseEvent]:
        """Advance exactly one global cycle; returns the pulses emitted in it."""
        c = self.cycle
        while self._pending and self._pending[0][0] <= c:
            _, _, fid, value = heapq.heappop(self._pending)
            self.deliver_fproc(fid, value)
        emitted: list[PulseEvent] = []
        for core in self.cores:
            if core.status is not Status.HALTED:
                self._tick(core, c, emitted)
        released = self._release_barriers(c)
        for core in self.cores:
            if core.status is not Status.HALTED:
                core.qclk = (core.qclk + 1) & QCLK_MASK
        for core in released:
            core.qclk = 0
        self.cycle = c + 1
        return emitted

    # -- driver ------------------------------------------------------------

    def _next_activity(self) -> float:
        """Earliest cycle >= now at which some core or delivery does anything."""
        c = self.cycle
        nxt = math.inf
        if self._pending:
            nxt = self._pending[0][0]
        for core in self.cores:
            if core.status is Status.HALTED:
                continue
            instr = core.instr
            if instr is None:
                return c
            if isinstance(instr, Pulse):
                t = core.busy_until if core.emitted else c + (instr.time - core.qclk)
            elif isinstance(instr, (ReadFproc, BranchFproc)):
                if core.fproc_value is not None:
                    t = core.busy_until
                elif self._has_value(core, instr.fproc_id):
                    return c
                else:
                    continue
            elif isinstance(instr, Sync):
                if core.arrived:
                    continue
                t = core.busy_until
            else:
                t = core.busy_until
            if t <= c:
                return c
            nxt = min(nxt, t)
        return nxt

    def blocked_cores(self) -> list[tuple[int, str]]:
        out = []
        for core in self.cores:
            if core.status is Status.WAITING_FPROC:
                out.append((core.core_id, f"waiting on fproc {core.instr.fproc_id}"))
            elif core.status is Status.WAITING_SYNC:
                out.append((core.core_id, f"waiting at sync barrier {core.instr.barrier_id}"))
        return out

    def run(self, max_cycles: int, *, fast_forward: bool = True) -> RunResult:
        """Step until every core halts or ``max_cycles`` elapse.

        With ``fast_forward`` the clock jumps over cycles in which nothing
        can happen; the result is identical to single stepping.
        """
        if max_cycles <= 0:
            raise ValueError("max_cycles must be positive")
        limit = self.cycle + max_cycles
        start_events = len(self.events)
        while not self.halted:
            if self.cycle >= limit:
                return RunResult("budget", self.cycle, self.events[start_events:])
            nxt = self._next_activity()
            if nxt == math.inf:
                raise Deadlock(self.cycle, self.blocked_cores())
            if fast_forward and nxt > self.cycle:
                skip = min(int(nxt), limit) - self.cycle
                for core in self.cores:
                    if core.status is not Status.HALTED:
                        core.qclk = (core.qclk + skip) & QCLK_MASK
                self.cycle += skip
                continue
            self.step()
        return RunResult("halted", self.cycle, self.events[start_events:])


def step(machine: Machine) -> list[PulseEvent]:
    return machine.step()


def deliver_fproc(machine: Machine, fproc_id: int, value: int) -> Machine:
    machine.deliver_fproc(fproc_id, value)
    return machine


def run(machine: Machine, max_cycles: int) -> RunResult:
    return machine.run(max_cycles)


def write_event_csv(path, events: Sequence[PulseEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle", "channel", "freq_word", "phase_word", "amp_word", "length", "env_addr"])
        for ev in events:
            c = ev.cmd
            w.writerow([ev.cycle, ev.channel, c.freq_word, c.phase_word, c.amp_word, c.length, c.env_addr])


def read_delivery_csv(path) -> list[tuple[int, int, int]]:
    """Open-loop delivery script rows ``(cycle, fproc_id, value)``."""
    with open(path, newline="") as fh:
        return [(int(r["cycle"]), int(r["fproc_id"]), int(r["value"])) for r in csv.DictReader(fh)]
