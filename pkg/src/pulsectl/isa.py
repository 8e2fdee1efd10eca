"""Distributed-processor instruction set.

Every instruction is held in a 128-bit word: the opcode sits in the top
8 bits and the operand fields follow MSB-first directly below it. Bits not
claimed by an opcode's fields are reserved and must be zero.

The pulse command payload is 72 bits wide, laid out MSB-first as::

    [freq_word:24 | phase_word:14 | amp_word:10 | length:12 | env_addr:12]

and occupies bits 71..0 of a ``Pulse`` word.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, fields
from typing import Mapping, Sequence, Union

WORD_BITS = 128
OPCODE_BITS = 8

FREQ_BITS = 24
PHASE_BITS = 14
AMP_BITS = 10
LENGTH_BITS = 12
ENV_ADDR_BITS = 12
PULSE_CMD_BITS = FREQ_BITS + PHASE_BITS + AMP_BITS + LENGTH_BITS + ENV_ADDR_BITS
assert PULSE_CMD_BITS == 72

ENVELOPE_CAPACITY = 1 << ENV_ADDR_BITS
NUM_REGISTERS = 16
TIME_BITS = 32
CHANNEL_BITS = 8
TARGET_BITS = 16
FPROC_BITS = 8
BARRIER_BITS = 8
CORE_MASK_BITS = 32

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1

PROGRAM_MAGIC = b"QBC2"
PROGRAM_VERSION = 1


class IsaError(Exception):
    pass


class EncodingRangeError(IsaError, ValueError):
    """A field value does not fit its encoding; ``field`` names it."""

    def __init__(self, field: str, value, message: str | None = None):
        self.field = field
        self.value = value
        super().__init__(message or f"field {field!r} out of range: {value!r}")


class DecodeError(IsaError, ValueError):
    def __init__(self, message: str, opcode: int | None = None):
        self.opcode = opcode
        super().__init__(message)


class FormatError(IsaError, ValueError):
    """Malformed program or envelope file."""


class Opcode(enum.IntEnum):
    PULSE = 0x01
    ALU = 0x02
    JUMP = 0x03
    BRANCH_ALU = 0x04
    READ_FPROC = 0x05
    BRANCH_FPROC = 0x06
    SYNC = 0x07
    HALT = 0x08


class Alu(enum.IntEnum):
    ADD = 0
    SUB = 1
    EQ = 2
    GT = 3
    LT = 4
    GE = 5
    LE = 6


class DstKind(enum.IntEnum):
    REG = 0
    QCLK = 1
    IP = 2


def wrap_int32(value: int) -> int:
    value &= 0xFFFFFFFF
    return value - (1 << 32) if value & 0x80000000 else value


def alu_eval(op: Alu, a: int, b: int) -> int:
    """Signed 32-bit ALU: add/sub wrap around, comparisons yield 1 or 0."""
    if op == Alu.ADD:
        return wrap_int32(a + b)
    if op == Alu.SUB:
        return wrap_int32(a - b)
    if op == Alu.EQ:
        return int(a == b)
    if op == Alu.GT:
        return int(a > b)
    if op == Alu.LT:
        return int(a < b)
    if op == Alu.GE:
        return int(a >= b)
    if op == Alu.LE:
        return int(a <= b)
    raise ValueError(f"unknown ALU op {op!r}")


def _round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def quantize_freq(f_hz: float, fs_hz: float) -> int:
    """Frequency word for ``f_hz`` on a channel sampled at ``fs_hz``.

    A value that rounds up to 2**24 aliases to word 0 (the same carrier).
    """
    if fs_hz <= 0:
        raise EncodingRangeError("fs_hz", fs_hz, f"sample rate must be positive, got {fs_hz!r}")
    if not (0 <= f_hz < fs_hz):
        raise EncodingRangeError("freq", f_hz, f"frequency {f_hz!r} Hz outside [0, {fs_hz!r})")
    return _round_half_away(f_hz / fs_hz * (1 << FREQ_BITS)) % (1 << FREQ_BITS)


def quantize_phase(phi_rad: float) -> int:
    turns = math.fmod(phi_rad, 2 * math.pi)
    if turns < 0:
        turns += 2 * math.pi
    return _round_half_away(turns / (2 * math.pi) * (1 << PHASE_BITS)) % (1 << PHASE_BITS)


def quantize_amp(amp: float) -> int:
    word = _round_half_away(amp * (1 << AMP_BITS))
    if not (0 <= word < (1 << AMP_BITS)):
        raise EncodingRangeError("amp", amp, f"amplitude {amp!r} outside [0, 1)")
    return word


def freq_from_word(word: int, fs_hz: float) -> float:
    return word / (1 << FREQ_BITS) * fs_hz


def phase_from_word(word: int) -> float:
    return word / (1 << PHASE_BITS) * 2 * math.pi


def amp_from_word(word: int) -> float:
    return word / (1 << AMP_BITS)


def _check_unsigned(name: str, value: int, bits: int) -> None:
    if not isinstance(value, (int,)) or isinstance(value, bool) or not (0 <= value < (1 << bits)):
        raise EncodingRangeError(name, value)


def _check_signed32(name: str, value: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or not (INT32_MIN <= value <= INT32_MAX):
        raise EncodingRangeError(name, value)


@dataclass(frozen=True)
class PulseCommand:
    freq_word: int = 0
    phase_word: int = 0
    amp_word: int = 0
    length: int = 0
    env_addr: int = 0

    _WIDTHS = (
        ("freq_word", FREQ_BITS),
        ("phase_word", PHASE_BITS),
        ("amp_word", AMP_BITS),
        ("length", LENGTH_BITS),
        ("env_addr", ENV_ADDR_BITS),
    )

    def validate(self) -> None:
        for name, bits in self._WIDTHS:
            _check_unsigned(name, getattr(self, name), bits)

    def pack(self) -> int:
        self.validate()
        word = 0
        for name, bits in self._WIDTHS:
            word = (word << bits) | getattr(self, name)
        return word

    @classmethod
    def unpack(cls, word: int) -> "PulseCommand":
        if not (0 <= word < (1 << PULSE_CMD_BITS)):
            raise DecodeError(f"pulse command wider than {PULSE_CMD_BITS} bits")
        values = {}
        for name, bits in reversed(cls._WIDTHS):
            values[name] = word & ((1 << bits) - 1)
            word >>= bits
        return cls(**values)


@dataclass(frozen=True)
class Pulse:
    time: int
    channel: int
    cmd: PulseCommand


@dataclass(frozen=True)
class AluOp:
    op: Alu
    lhs: int
    rhs: int
    dst: int = 0
    rhs_imm: bool = True
    dst_kind: DstKind = DstKind.REG


@dataclass(frozen=True)
class Jump:
    target: int


@dataclass(frozen=True)
class BranchAlu:
    op: Alu
    lhs: int
    rhs: int
    target: int
    rhs_imm: bool = True


@dataclass(frozen=True)
class ReadFproc:
    fproc_id: int
    dst: int


@dataclass(frozen=True)
class BranchFproc:
    fproc_id: int
    value: int
    target: int


@dataclass(frozen=True)
class Sync:
    barrier_id: int
    core_mask: int


@dataclass(frozen=True)
class Halt:
    pass


Instruction = Union[Pulse, AluOp, Jump, BranchAlu, ReadFproc, BranchFproc, Sync, Halt]

# Operand fields per opcode, MSB-first below the opcode byte. Names starting
# with "_" are padding.
_LAYOUT: dict[Opcode, tuple[tuple[str, int], ...]] = {
    Opcode.PULSE: (("time", TIME_BITS), ("channel", CHANNEL_BITS), ("_pad", 8), ("cmd", PULSE_CMD_BITS)),
    Opcode.ALU: (("op", 4), ("lhs", 4), ("rhs_imm", 1), ("rhs", 32), ("dst_kind", 2), ("dst", 4)),
    Opcode.JUMP: (("target", TARGET_BITS),),
    Opcode.BRANCH_ALU: (("op", 4), ("lhs", 4), ("rhs_imm", 1), ("rhs", 32), ("target", TARGET_BITS)),
    Opcode.READ_FPROC: (("fproc_id", FPROC_BITS), ("dst", 4)),
    Opcode.BRANCH_FPROC: (("fproc_id", FPROC_BITS), ("value", 32), ("target", TARGET_BITS)),
    Opcode.SYNC: (("barrier_id", BARRIER_BITS), ("core_mask", CORE_MASK_BITS)),
    Opcode.HALT: (),
}

_OPCODE_OF = {
    Pulse: Opcode.PULSE,
    AluOp: Opcode.ALU,
    Jump: Opcode.JUMP,
    BranchAlu: Opcode.BRANCH_ALU,
    ReadFproc: Opcode.READ_FPROC,
    BranchFproc: Opcode.BRANCH_FPROC,
    Sync: Opcode.SYNC,
    Halt: Opcode.HALT,
}
_CLASS_OF = {v: k for k, v in _OPCODE_OF.items()}

for _op, _layout in _LAYOUT.items():
    assert OPCODE_BITS + sum(w for _, w in _layout) <= WORD_BITS, _op


def _check_reg(name: str, value: int) -> None:
    _check_unsigned(name, value, 4)


def _check_alu_operands(instr) -> None:
    if not isinstance(instr.op, Alu):
        try:
            Alu(instr.op)
        except ValueError:
            raise EncodingRangeError("op", instr.op) from None
    _check_reg("lhs", instr.lhs)
    if instr.rhs_imm:
        _check_signed32("rhs", instr.rhs)
    else:
        _check_reg("rhs", instr.rhs)


def _field_values(instr: Instruction) -> dict[str, int]:
    """Validated, unsigned field values for ``instr``."""
    if isinstance(instr, Pulse):
        _check_unsigned("time", instr.time, TIME_BITS)
        _check_unsigned("channel", instr.channel, CHANNEL_BITS)
        return {"time": instr.time, "channel": instr.channel, "cmd": instr.cmd.pack()}
    if isinstance(instr, AluOp):
        _check_alu_operands(instr)
        try:
            kind = DstKind(instr.dst_kind)
        except ValueError:
            raise EncodingRangeError("dst_kind", instr.dst_kind) from None
        _check_reg("dst", instr.dst)
        if kind != DstKind.REG and instr.dst != 0:
            raise EncodingRangeError("dst", instr.dst, "dst register must be 0 unless dst_kind is REG")
        return {
            "op": int(instr.op), "lhs": instr.lhs, "rhs_imm": int(bool(instr.rhs_imm)),
            "rhs": instr.rhs & 0xFFFFFFFF, "dst_kind": int(kind), "dst": instr.dst,
        }
    if isinstance(instr, Jump):
        _check_unsigned("target", instr.target, TARGET_BITS)
        return {"target": instr.target}
    if isinstance(instr, BranchAlu):
        _check_alu_operands(instr)
        _check_unsigned("target", instr.target, TARGET_BITS)
        return {
            "op": int(instr.op), "lhs": instr.lhs, "rhs_imm": int(bool(instr.rhs_imm)),
            "rhs": instr.rhs & 0xFFFFFFFF, "target": instr.target,
        }
    if isinstance(instr, ReadFproc):
        _check_unsigned("fproc_id", instr.fproc_id, FPROC_BITS)
        _check_reg("dst", instr.dst)
        return {"fproc_id": instr.fproc_id, "dst": instr.dst}
    if isinstance(instr, BranchFproc):
        _check_unsigned("fproc_id", instr.fproc_id, FPROC_BITS)
        _check_signed32("value", instr.value)
        _check_unsigned("target", instr.target, TARGET_BITS)
        return {"fproc_id": instr.fproc_id, "value": instr.value & 0xFFFFFFFF, "target": instr.target}
    if isinstance(instr, Sync):
        _check_unsigned("barrier_id", instr.barrier_id, BARRIER_BITS)
        _check_unsigned("core_mask", instr.core_mask, CORE_MASK_BITS)
        return {"barrier_id": instr.barrier_id, "core_mask": instr.core_mask}
    if isinstance(instr, Halt):
        return {}
    raise TypeError(f"not an instruction: {instr!r}")


def encode_instruction(instr: Instruction) -> int:
    """Encode one instruction as a 128-bit integer word."""
    opcode = _OPCODE_OF.get(type(instr))
    if opcode is None:
        raise TypeError(f"not an instruction: {instr!r}")
    values = _field_values(instr)
    word = int(opcode)
    used = OPCODE_BITS
    for name, bits in _LAYOUT[opcode]:
        word = (word << bits) | values.get(name, 0)
        used += bits
    return word << (WORD_BITS - used)


def decode_instruction(word: int) -> Instruction:
    if not (0 <= word < (1 << WORD_BITS)):
        raise DecodeError(f"word does not fit in {WORD_BITS} bits")
    opcode_byte = word >> (WORD_BITS - OPCODE_BITS)
    try:
        opcode = Opcode(opcode_byte)
    except ValueError:
        raise DecodeError(f"unknown opcode 0x{opcode_byte:02x}", opcode=opcode_byte) from None

    pos = WORD_BITS - OPCODE_BITS
    raw: dict[str, int] = {}
    for name, bits in _LAYOUT[opcode]:
        pos -= bits
        raw[name] = (word >> pos) & ((1 << bits) - 1)
    if word & ((1 << pos) - 1) or raw.pop("_pad", 0):
        raise DecodeError(f"reserved bits set in {opcode.name} word", opcode=opcode_byte)

    def alu_fields() -> dict:
        try:
            op = Alu(raw["op"])
        except ValueError:
            raise DecodeError(f"unknown ALU op {raw['op']}", opcode=opcode_byte) from None
        imm = bool(raw["rhs_imm"])
        rhs = wrap_int32(raw["rhs"]) if imm else raw["rhs"]
        if not imm and rhs >= NUM_REGISTERS:
            raise DecodeError(f"register operand {rhs} out of range", opcode=opcode_byte)
        return {"op": op, "lhs": raw["lhs"], "rhs": rhs, "rhs_imm": imm}

    if opcode == Opcode.PULSE:
        return Pulse(time=raw["time"], channel=raw["channel"], cmd=PulseCommand.unpack(raw["cmd"]))
    if opcode == Opcode.ALU:
        try:
            kind = DstKind(raw["dst_kind"])
        except ValueError:
            raise DecodeError(f"unknown dst kind {raw['dst_kind']}", opcode=opcode_byte) from None
        if kind != DstKind.REG and raw["dst"]:
            raise DecodeError("dst register set for non-register destination", opcode=opcode_byte)
        return AluOp(dst=raw["dst"], dst_kind=kind, **alu_fields())
    if opcode == Opcode.JUMP:
        return Jump(target=raw["target"])
    if opcode == Opcode.BRANCH_ALU:
        return BranchAlu(target=raw["target"], **alu_fields())
    if opcode == Opcode.READ_FPROC:
        return ReadFproc(fproc_id=raw["fproc_id"], dst=raw["dst"])
    if opcode == Opcode.BRANCH_FPROC:
        return BranchFproc(fproc_id=raw["fproc_id"], value=wrap_int32(raw["value"]), target=raw["target"])
    if opcode == Opcode.SYNC:
        return Sync(barrier_id=raw["barrier_id"], core_mask=raw["core_mask"])
    return Halt()


def branch_targets(instr: Instruction) -> tuple[int, ...]:
    if isinstance(instr, (Jump, BranchAlu, BranchFproc)):
        return (instr.target,)
    return ()


def validate_program(program: Sequence[Instruction]) -> None:
    """Check encodability and that every branch lands inside ``program``."""
    for pc, instr in enumerate(program):
        _field_values(instr)
        for target in branch_targets(instr):
            if not (0 <= target < len(program)):
                raise EncodingRangeError("target", target, f"pc {pc}: branch target {target} outside program of length {len(program)}")


# -- binary program file -----------------------------------------------------

def write_program(programs: Mapping[int, Sequence[Instruction]]) -> bytes:
    """Serialize per-core programs (core id -> instructions), sorted by core id.

    Layout, all little-endian: magic ``QBC2``, version u16, core count u16,
    then per core: core id u16, instruction count u32, and that many 16-byte
    instruction words.
    """
    out = bytearray(PROGRAM_MAGIC)
    out += struct.pack("<HH", PROGRAM_VERSION, len(programs))
    for core in sorted(programs):
        program = programs[core]
        _check_unsigned("core_id", core, 16)
        validate_program(program)
        out += struct.pack("<HI", core, len(program))
        for instr in program:
            out += encode_instruction(instr).to_bytes(16, "little")
    return bytes(out)


def read_program(data: bytes) -> dict[int, list[Instruction]]:
    if len(data) < 8:
        raise FormatError("truncated program file header")
    if data[:4] != PROGRAM_MAGIC:
        raise FormatError(f"bad magic {bytes(data[:4])!r}, expected {PROGRAM_MAGIC!r}")
    version, ncores = struct.unpack_from("<HH", data, 4)
    if version != PROGRAM_VERSION:
        raise FormatError(f"unsupported program file version {version}")
    pos = 8
    programs: dict[int, list[Instruction]] = {}
    for _ in range(ncores):
        if pos + 6 > len(data):
            raise FormatError("truncated core header")
        core, count = struct.unpack_from("<HI", data, pos)
        pos += 6
        end = pos + 16 * count
        if end > len(data):
            raise FormatError(f"truncated instruction stream for core {core}")
        if core in programs:
            raise FormatError(f"duplicate core id {core}")
        programs[core] = [
            decode_instruction(int.from_bytes(data[p:p + 16], "little")) for p in range(pos, end, 16)
        ]
        pos = end
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last core")
    return programs


# -- text listing ------------------------------------------------------------

def format_instruction(instr: Instruction) -> str:
    def operand(value: int, imm: bool) -> str:
        return f"#{value}" if imm else f"r{value}"

    if isinstance(instr, Pulse):
        c = instr.cmd
        return (f"pulse t={instr.time} ch={instr.channel} freq=0x{c.freq_word:06x} "
                f"phase=0x{c.phase_word:04x} amp=0x{c.amp_word:03x} len={c.length} env={c.env_addr}")
    if isinstance(instr, AluOp):
        dst = {DstKind.REG: f"r{instr.dst}", DstKind.QCLK: "qclk", DstKind.IP: "ip"}[DstKind(instr.dst_kind)]
        return f"alu op={Alu(instr.op).name.lower()} lhs=r{instr.lhs} rhs={operand(instr.rhs, instr.rhs_imm)} dst={dst}"
    if isinstance(instr, Jump):
        return f"jump target={instr.target}"
    if isinstance(instr, BranchAlu):
        return (f"branch op={Alu(instr.op).name.lower()} lhs=r{instr.lhs} "
                f"rhs={operand(instr.rhs, instr.rhs_imm)} target={instr.target}")
    if isinstance(instr, ReadFproc):
        return f"read_fproc id={instr.fproc_id} dst=r{instr.dst}"
    if isinstance(instr, BranchFproc):
        return f"branch_fproc id={instr.fproc_id} value={instr.value} target={instr.target}"
    if isinstance(instr, Sync):
        return f"sync barrier={instr.barrier_id} mask=0x{instr.core_mask:x}"
    if isinstance(instr, Halt):
        return "halt"
    raise TypeError(f"not an instruction: {instr!r}")


def _parse_reg(text: str) -> int:
    if not text.startswith("r"):
        raise ValueError(f"expected register, got {text!r}")
    return int(text[1:])


def _parse_operand(text: str) -> tuple[int, bool]:
    if text.startswith("#"):
        return int(text[1:], 0), True
    return _parse_reg(text), False


def parse_instruction(line: str) -> Instruction:
    """Inverse of :func:`format_instruction`."""
    mnemonic, *rest = line.split()
    args = {}
    for tok in rest:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ValueError(f"malformed operand {tok!r} in {line!r}")
        args[key] = value
    try:
        if mnemonic == "pulse":
            cmd = PulseCommand(int(args["freq"], 0), int(args["phase"], 0), int(args["amp"], 0),
                               int(args["len"], 0), int(args["env"], 0))
            return Pulse(time=int(args["t"], 0), channel=int(args["ch"], 0), cmd=cmd)
        if mnemonic in ("alu", "branch"):
            op = Alu[args["op"].upper()]
            rhs, imm = _parse_operand(args["rhs"])
            if mnemonic == "branch":
                return BranchAlu(op, _parse_reg(args["lhs"]), rhs, int(args["target"], 0), rhs_imm=imm)
            dst = args["dst"]
            if dst == "qclk":
                return AluOp(op, _parse_reg(args["lhs"]), rhs, 0, imm, DstKind.QCLK)
            if dst == "ip":
                return AluOp(op, _parse_reg(args["lhs"]), rhs, 0, imm, DstKind.IP)
            return AluOp(op, _parse_reg(args["lhs"]), rhs, _parse_reg(dst), imm, DstKind.REG)
        if mnemonic == "jump":
            return Jump(int(args["target"], 0))
        if mnemonic == "read_fproc":
            return ReadFproc(int(args["id"], 0), _parse_reg(args["dst"]))
        if mnemonic == "branch_fproc":
            return BranchFproc(int(args["id"], 0), int(args["value"], 0), int(args["target"], 0))
        if mnemonic == "sync":
            return Sync(int(args["barrier"], 0), int(args["mask"], 0))
        if mnemonic == "halt":
            return Halt()
    except KeyError as exc:
        raise ValueError(f"missing operand {exc.args[0]!r} in {line!r}") from None
    raise ValueError(f"unknown mnemonic {mnemonic!r}")


def instruction_fields(instr: Instruction) -> dict:
    return {f.name: getattr(instr, f.name) for f in fields(instr)}
