"""Pulse-level programs to core binaries and per-channel envelope images."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channels import ChannelConfig, ConfigError
from .compiler.ir import (
    BranchOnResult, Goto, Label, PulseProgram, ReadResult, Stop, SyncCores, TimedPulse,
)
from .dsp import Envelope, EnvelopeMemory, make_envelope, quantize_iq
from .isa import (
    LENGTH_BITS, BranchFproc, EncodingRangeError, FormatError, Halt, Instruction, Jump, Pulse,
    PulseCommand, ReadFproc, Sync, format_instruction, parse_instruction, quantize_amp,
    quantize_freq, quantize_phase, read_program, write_program,
)

ENVELOPE_MAGIC = b"QEV1"


class AssemblyError(ValueError):
    pass


@dataclass
class EnvelopeImage:
    """One channel's envelope table: ``(addr, iq)`` entries plus a name directory."""

    channel: str
    capacity: int
    entries: list[tuple[int, np.ndarray]] = field(default_factory=list)
    directory: dict[str, tuple[int, int]] = field(default_factory=dict)
    _by_content: dict[bytes, int] = field(default_factory=dict, repr=False)

    @property
    def used(self) -> int:
        return sum(len(iq) for _, iq in self.entries)

    def add(self, name: str, iq: np.ndarray) -> tuple[int, int]:
        if name in self.directory:
            return self.directory[name]
        key = iq.tobytes()
        if key in self._by_content:
            addr = self._by_content[key]
        else:
            addr = self.used
            if addr + len(iq) > self.capacity:
                raise AssemblyError(
                    f"envelope memory overflow on {self.channel}: {name!r} needs {len(iq)} entries, "
                    f"{self.capacity - addr} free")
            self.entries.append((addr, iq))
            self._by_content[key] = addr
        self.directory[name] = (addr, len(iq))
        return self.directory[name]

    def to_bytes(self) -> bytes:
        out = bytearray(ENVELOPE_MAGIC)
        out += struct.pack("<H", len(self.entries))
        for addr, iq in self.entries:
            out += struct.pack("<HH", addr, len(iq))
            out += np.asarray(iq, dtype="<i2").tobytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes, channel: str = "", capacity: int = 4096) -> "EnvelopeImage":
        if data[:4] != ENVELOPE_MAGIC:
            raise FormatError(f"bad envelope image magic {bytes(data[:4])!r}")
        if len(data) < 6:
            raise FormatError("truncated envelope image header")
        (count,) = struct.unpack_from("<H", data, 4)
        pos = 6
        img = cls(channel, capacity)
        for _ in range(count):
            if pos + 4 > len(data):
                raise FormatError("truncated envelope entry header")
            addr, n = struct.unpack_from("<HH", data, pos)
            pos += 4
            end = pos + 4 * n
            if end > len(data):
                raise FormatError("truncated envelope samples")
            iq = np.frombuffer(data[pos:end], dtype="<i2").reshape(n, 2).astype(np.int16)
            img.entries.append((addr, iq))
            img._by_content[iq.tobytes()] = addr
            pos = end
        if pos != len(data):
            raise FormatError("trailing bytes after envelope image")
        return img

    def load_into(self, mem: EnvelopeMemory) -> None:
        for addr, iq in self.entries:
            mem.write(addr, iq)


@dataclass
class Assembled:
    programs: dict[int, list[Instruction]]
    images: dict[str, EnvelopeImage]
    meta: dict

    def binary(self) -> bytes:
        return write_program(self.programs)

    def save(self, outdir) -> list[Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        written = [outdir / "program.bin"]
        written[0].write_bytes(self.binary())
        for name, img in sorted(self.images.items()):
            path = outdir / f"env_{name}.qev"
            path.write_bytes(img.to_bytes())
            written.append(path)
        meta = outdir / "meta.json"
        meta.write_text(json.dumps(self.meta, indent=1))
        written.append(meta)
        return written

    @classmethod
    def load(cls, outdir) -> "Assembled":
        outdir = Path(outdir)
        meta = json.loads((outdir / "meta.json").read_text())
        programs = read_program((outdir / "program.bin").read_bytes())
        images = {}
        for name, d in meta["envelopes"].items():
            img = EnvelopeImage.from_bytes((outdir / f"env_{name}.qev").read_bytes(), name, d["capacity"])
            img.directory = {k: tuple(v) for k, v in d["directory"].items()}
            images[name] = img
        return cls(programs, images, meta)

    def measurement_map(self) -> dict[tuple[int, int], dict]:
        return {(m["core"], m["pc"]): m for m in self.meta["measurements"]}


def _envelope_source(envelopes):
    if hasattr(envelopes, "envelope"):
        return envelopes.envelope

    def lookup(name: str) -> Envelope:
        try:
            spec = envelopes[name]
        except KeyError:
            raise AssemblyError(f"undefined envelope {name!r}") from None
        return spec if isinstance(spec, Envelope) else make_envelope(spec)
    return lookup


def assemble(programs: dict[int, PulseProgram], envelopes, channels: ChannelConfig,
             mapping: dict[str, int] | None = None) -> Assembled:
    """Encode per-core pulse programs.

    ``envelopes`` is a calibration set or a name -> envelope spec mapping.
    Envelopes are stored once per channel per distinct quantized content,
    first fit in program order (cores ascending).
    """
    lookup = _envelope_source(envelopes)
    images: dict[str, EnvelopeImage] = {}
    binaries: dict[int, list[Instruction]] = {}
    measurements = []

    for core in sorted(programs):
        items = list(programs[core].items)
        if not items or not isinstance(items[-1], Stop):
            items.append(Stop())
        labels: dict[str, int] = {}
        pc = 0
        for it in items:
            if isinstance(it, Label):
                if it.name in labels:
                    raise AssemblyError(f"core {core}: duplicate label {it.name!r}")
                labels[it.name] = pc
            else:
                pc += 1

        def target(name: str) -> int:
            try:
                return labels[name]
            except KeyError:
                raise AssemblyError(f"core {core}: undefined label {name!r}") from None

        code: list[Instruction] = []
        for it in items:
            if isinstance(it, Label):
                continue
            if isinstance(it, TimedPulse):
                code.append(_encode_pulse(it, core, lookup, channels, images))
                if it.tag is not None:
                    measurements.append({"core": core, "pc": len(code) - 1, "result": it.tag.result,
                                         "fproc_id": it.tag.fproc_id, "qubit": it.tag.qubit})
            elif isinstance(it, Goto):
                code.append(Jump(target(it.label)))
            elif isinstance(it, BranchOnResult):
                code.append(BranchFproc(it.fproc_id, it.value, target(it.label)))
            elif isinstance(it, ReadResult):
                code.append(ReadFproc(it.fproc_id, it.reg))
            elif isinstance(it, SyncCores):
                code.append(Sync(it.barrier_id, sum(1 << k for k in it.cores)))
            elif isinstance(it, Stop):
                code.append(Halt())
            else:
                raise AssemblyError(f"core {core}: unknown item {it!r}")
        binaries[core] = code

    results = [m["result"] for m in sorted(measurements, key=lambda m: m["fproc_id"])]
    meta = {
        "channels": channels.to_dict(),
        "mapping": dict(mapping or {}),
        "results": list(dict.fromkeys(results)),
        "measurements": measurements,
        "envelopes": {name: {"capacity": img.capacity, "directory": {k: list(v) for k, v in img.directory.items()}}
                      for name, img in sorted(images.items())},
    }
    write_program(binaries)  # validates every field and branch target
    return Assembled(binaries, images, meta)


def _encode_pulse(tp: TimedPulse, core: int, lookup, channels: ChannelConfig,
                  images: dict[str, EnvelopeImage]) -> Pulse:
    try:
        ch = channels[tp.channel]
    except ConfigError as exc:
        raise AssemblyError(str(exc)) from None
    env = lookup(tp.env)
    if env.length != tp.length:
        raise AssemblyError(f"pulse on {tp.channel}: length {tp.length} != envelope {tp.env!r} length {env.length}")
    if env.length >= 1 << LENGTH_BITS:
        raise AssemblyError(f"envelope {tp.env!r} longer than the {LENGTH_BITS}-bit length field")
    img = images.setdefault(tp.channel, EnvelopeImage(tp.channel, ch.env_capacity))
    addr, n = img.add(tp.env, quantize_iq(env.samples))
    try:
        cmd = PulseCommand(quantize_freq(tp.freq, ch.sample_rate), quantize_phase(tp.phase),
                           quantize_amp(tp.amp), n, addr)
        instr = Pulse(tp.time, channels.id_of(tp.channel), cmd)
        cmd.validate()
    except EncodingRangeError as exc:
        raise AssemblyError(f"core {core}, pulse on {tp.channel} at t={tp.time}: {exc}") from None
    return instr


def listing(programs: dict[int, list[Instruction]]) -> str:
    """Text disassembly; ``parse_listing`` reads it back."""
    lines = []
    for core in sorted(programs):
        lines.append(f"core {core}:")
        for pc, instr in enumerate(programs[core]):
            lines.append(f"  {pc:4d}: {format_instruction(instr)}")
    return "\n".join(lines) + "\n"


def disassemble(data: bytes) -> dict[int, list[Instruction]]:
    return read_program(data)


def parse_listing(text: str) -> dict[int, list[Instruction]]:
    programs: dict[int, list[Instruction]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("core ") and line.endswith(":"):
            current = int(line[5:-1])
            programs[current] = []
            continue
        if current is None:
            raise FormatError(f"instruction before any 'core N:' header: {raw!r}")
        _, _, body = line.partition(":")
        programs[current].append(parse_instruction(body.strip()))
    return programs
