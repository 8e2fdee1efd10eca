"""Circuit compiler: parse, resolve gates, apply virtual phases, schedule, split per core."""

from __future__ import annotations

from dataclasses import dataclass

from ..channels import ChannelConfig
from ..emulator import FPROC_LATENCY
from .calibration import CalibrationError, CalibrationSet
from .circuit import CircuitParseError, CircuitProgram, parse_circuit
from .ir import CompileError, IrProgram, PulseProgram
from .passes import apply_virtual_z, resolve_gates, schedule, split_per_core


@dataclass
class Compiled:
    ir: IrProgram
    programs: dict[int, PulseProgram]
    mapping: dict[str, int]

    @property
    def results(self) -> tuple[str, ...]:
        return self.ir.results


def compile_circuit(prog: CircuitProgram | str, cal: CalibrationSet, channels: ChannelConfig,
                    mapping: dict[str, int] | None = None) -> Compiled:
    if isinstance(prog, str):
        prog = parse_circuit(prog)
    if cal.fproc_latency + FPROC_LATENCY > cal.feedback_latency:
        raise CompileError(
            f"feedback latency {cal.feedback_latency} is shorter than the result path "
            f"({cal.fproc_latency} + {FPROC_LATENCY} ticks)")
    ir = resolve_gates(prog, cal, channels)
    ir = apply_virtual_z(ir)
    if mapping is None:
        mapping = {q: i for i, q in enumerate(ir.qubits)}
    ir = schedule(ir, channels, mapping, cal.feedback_latency)
    return Compiled(ir, split_per_core(ir, mapping, channels), dict(mapping))


__all__ = [
    "CalibrationError", "CalibrationSet", "CircuitParseError", "CircuitProgram", "CompileError",
    "Compiled", "IrProgram", "PulseProgram", "apply_virtual_z", "compile_circuit", "parse_circuit",
    "resolve_gates", "schedule", "split_per_core",
]
