import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulsectl import isa
from pulsectl.isa import (
    Alu, AluOp, BranchFproc, DecodeError, DstKind, EncodingRangeError, FormatError, Halt, Jump, Opcode,
    Pulse, PulseCommand, Sync, decode_instruction, encode_instruction, format_instruction, parse_instruction,
    quantize_amp, quantize_freq, quantize_phase, read_program, write_program,
)
from strategies import instructions, programs, pulse_commands


def test_pulse_command_is_72_bits():
    assert isa.PULSE_CMD_BITS == 72
    full = PulseCommand((1 << 24) - 1, (1 << 14) - 1, (1 << 10) - 1, (1 << 12) - 1, (1 << 12) - 1)
    assert full.pack() == (1 << 72) - 1


def test_pulse_command_field_order():
    cmd = PulseCommand(freq_word=1, phase_word=0, amp_word=0, length=0, env_addr=0)
    assert cmd.pack() == 1 << 48
    assert PulseCommand(env_addr=1).pack() == 1


@given(pulse_commands)
def test_pulse_command_roundtrip(cmd):
    assert PulseCommand.unpack(cmd.pack()) == cmd


def test_zero_pulse_sets_only_opcode():
    word = encode_instruction(Pulse(0, 0, PulseCommand()))
    assert word == int(Opcode.PULSE) << 120


def test_opcode_in_top_byte():
    for instr, op in [(Halt(), Opcode.HALT), (Jump(3), Opcode.JUMP), (Sync(1, 3), Opcode.SYNC)]:
        assert encode_instruction(instr) >> 120 == op


def test_halt_roundtrip():
    assert decode_instruction(encode_instruction(Halt())) == Halt()


@pytest.mark.parametrize("opcode", [0x00, 0xFF, 0x09])
def test_unknown_opcode(opcode):
    with pytest.raises(DecodeError) as exc:
        decode_instruction(opcode << 120)
    assert exc.value.opcode == opcode


def test_reserved_bits_rejected():
    with pytest.raises(DecodeError):
        decode_instruction(encode_instruction(Halt()) | 1)


@pytest.mark.parametrize("instr, field", [
    (Pulse(1 << 32, 0, PulseCommand()), "time"),
    (Pulse(0, 256, PulseCommand()), "channel"),
    (Pulse(0, 0, PulseCommand(freq_word=1 << 24)), "freq_word"),
    (AluOp(Alu.ADD, 16, 0), "lhs"),
    (AluOp(Alu.ADD, 0, 1 << 31), "rhs"),
    (AluOp(Alu.ADD, 0, 16, rhs_imm=False), "rhs"),
    (Jump(1 << 16), "target"),
    (BranchFproc(256, 0, 0), "fproc_id"),
    (Sync(0, 1 << 32), "core_mask"),
])
def test_encoding_range_error_names_field(instr, field):
    with pytest.raises(EncodingRangeError) as exc:
        encode_instruction(instr)
    assert exc.value.field == field


@settings(max_examples=1000)
@given(instructions())
def test_instruction_roundtrip(instr):
    word = encode_instruction(instr)
    assert 0 <= word < 1 << 128
    assert decode_instruction(word) == instr
    assert encode_instruction(decode_instruction(word)) == word


@given(instructions())
def test_listing_roundtrip(instr):
    assert parse_instruction(format_instruction(instr)) == instr


def test_negative_immediates_survive():
    instr = AluOp(Alu.SUB, 2, -7, 3)
    assert decode_instruction(encode_instruction(instr)).rhs == -7
    assert decode_instruction(encode_instruction(BranchFproc(0, -1, 5))).value == -1


def test_quantize_freq_examples():
    assert quantize_freq(0, 8e9) == 0
    assert quantize_freq(4e9, 8e9) == 1 << 23
    assert quantize_freq(100e6, 8e9) == 209715
    assert abs(isa.freq_from_word(209715, 8e9) - 100e6) <= 8e9 / 2**25


@pytest.mark.parametrize("f", [-1.0, 8e9, 9e9])
def test_quantize_freq_range(f):
    with pytest.raises(EncodingRangeError):
        quantize_freq(f, 8e9)


def test_quantize_freq_wraps_just_below_fs():
    # rounds up to 2**24, which is the same carrier as word 0
    assert quantize_freq(8e9 * (1 - 2**-26), 8e9) == 0


@given(st.floats(0, 8e9, exclude_max=True), st.floats(0, 8e9, exclude_max=True))
def test_quantize_freq_monotone(a, b):
    lo, hi = sorted((a, b))
    wl, wh = quantize_freq(lo, 8e9), quantize_freq(hi, 8e9)
    if wh != 0:  # wrap at the very top of the band
        assert wl <= wh


@given(st.floats(0, 8e9, exclude_max=True))
def test_quantize_freq_error_bound(f):
    w = quantize_freq(f, 8e9)
    err = abs(isa.freq_from_word(w, 8e9) - f)
    assert min(err, 8e9 - err) <= 8e9 / 2**25 * (1 + 1e-9)


def test_quantize_phase_examples():
    assert quantize_phase(0) == 0
    assert quantize_phase(math.pi) == 8192
    assert quantize_phase(-math.pi / 2) == 12288
    assert quantize_phase(2 * math.pi) == 0


def test_quantize_amp():
    assert quantize_amp(0.5) == 512
    assert quantize_amp(0) == 0
    with pytest.raises(EncodingRangeError):
        quantize_amp(1.0)
    with pytest.raises(EncodingRangeError):
        quantize_amp(-0.1)


def test_ties_round_away_from_zero():
    # 0.5 / 1024 of full scale sits exactly between words 0 and 1
    assert quantize_amp(0.5 / 1024) == 1
    assert quantize_freq(1.5 / 2**24 * 8e9, 8e9) == 2


def test_alu_eval_wraps():
    assert isa.alu_eval(Alu.ADD, 2**31 - 1, 1) == -2**31
    assert isa.alu_eval(Alu.SUB, -2**31, 1) == 2**31 - 1
    assert isa.alu_eval(Alu.GT, 3, 2) == 1
    assert isa.alu_eval(Alu.LE, 3, 2) == 0


@settings(max_examples=100)
@given(st.dictionaries(st.integers(0, 7), programs(), min_size=1, max_size=3))
def test_program_file_roundtrip(progs):
    data = write_program(progs)
    assert read_program(data) == progs
    assert write_program(read_program(data)) == data


def test_program_file_header():
    data = write_program({0: [Halt()]})
    assert data[:4] == b"QBC2"
    assert data[4:8] == bytes([1, 0, 1, 0])
    assert len(data) == 8 + 6 + 16


def test_bad_magic():
    data = bytearray(write_program({0: [Halt()]}))
    data[:4] = b"QBC3"
    with pytest.raises(FormatError):
        read_program(bytes(data))


def test_truncated_file():
    data = write_program({0: [Halt(), Halt()]})
    with pytest.raises(FormatError):
        read_program(data[:-1])


def test_branch_target_out_of_program():
    with pytest.raises(EncodingRangeError):
        write_program({0: [Jump(5), Halt()]})


def test_dst_kinds_roundtrip():
    for kind in DstKind:
        instr = AluOp(Alu.ADD, 1, 4, 0, True, kind)
        assert decode_instruction(encode_instruction(instr)) == instr
