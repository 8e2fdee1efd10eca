"""Closed-loop shot runner: emulator pulses drive the QPU model, readout bits
go back to the cores through the function processor."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .assembler import Assembled
from .channels import ChannelConfig
from .compiler.calibration import CalibrationSet
from .dsp import EnvelopeMemory, IqPoint, discriminate, dequantize_iq, mix_and_integrate, quantize_iq, synth_pulse
from .emulator import Machine, PulseEvent
from .isa import FREQ_BITS, freq_from_word, phase_from_word, quantize_amp
from .qpu import QpuModel, QubitModel

MODES = ("ideal-iq", "waveform")
DEFAULT_MAX_CYCLES = 10_000_000


class RunError(RuntimeError):
    pass


def x90_weight(cal: CalibrationSet, qubit: str) -> float:
    """Rotation-angle reference: summed magnitude of the quantized X90 pulse."""
    templates = cal.qubit(qubit).gates.get("X90")
    if not templates:
        return 1.0
    t = templates[0]
    env = dequantize_iq(quantize_iq(cal.envelope(t.env).samples))
    return quantize_amp(t.amp) / 1024 * float(np.sum(np.abs(env)))


def build_qpu(cal: CalibrationSet, qubits, seed: int, window_samples: dict[str, int] | None = None) -> QpuModel:
    models = {}
    for q in qubits:
        qc = cal.qubit(q)
        m = qc.model
        n = (window_samples or {}).get(q, cal.envelope(qc.readout.demod_env).length)
        adc_sigma = m.adc_amp * m.sigma / m.readout_amp * math.sqrt(n / 2) if m.readout_amp else 0.0
        models[q] = QubitModel(qc.drive_freq, x90_weight(cal, q), m.readout_amp, m.theta_d, m.sigma,
                               m.adc_amp, adc_sigma)
    return QpuModel(models, seed)


@dataclass
class ShotRecord:
    shot: int
    bits: str
    iq: dict[str, list[float]]
    cycles: int


@dataclass
class RunReport:
    shots: int
    counts: dict[str, int]
    seed: int
    mode: str
    results: list[str]
    cycles_min: int = 0
    cycles_max: int = 0
    cycles_mean: float = 0.0
    wall_seconds: float = 0.0
    records: list[ShotRecord] | None = None

    def probability(self, bits: str) -> float:
        return self.counts.get(bits, 0) / self.shots

    def to_dict(self) -> dict:
        d = {
            "shots": self.shots, "seed": self.seed, "mode": self.mode, "results": self.results,
            "counts": dict(sorted(self.counts.items())),
            "cycles_per_shot": {"min": self.cycles_min, "max": self.cycles_max, "mean": self.cycles_mean},
        }
        if self.records is not None:
            d["records"] = [vars(r) for r in self.records]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bitstring", "count", "probability"])
        for bits, n in sorted(self.counts.items()):
            w.writerow([bits, n, repr(n / self.shots)])
        return buf.getvalue()

    def gnuplot(self, csv_name: str) -> str:
        return "\n".join([
            "set datafile separator ','",
            "set style data histograms",
            "set style fill solid 0.6",
            "set yrange [0:1]",
            f"set xlabel 'outcome ({' '.join(self.results)})'",
            "set ylabel 'probability'",
            f"set title '{self.shots} shots, seed {self.seed}, {self.mode}'",
            f"plot '{csv_name}' using 3:xtic(1) skip 1 notitle",
            "",
        ])


class ShotRunner:
    """Runs an assembled program shot after shot against a fresh QPU state.

    Envelope memories are loaded once; each shot resets the cores, the
    mailboxes and the qubits. ``force`` maps result names to bits that the
    corresponding readout is projected onto before sampling.
    """

    def __init__(self, assembled: Assembled, cal: CalibrationSet, mode: str = "ideal-iq", seed: int | None = None,
                 *, force: dict[str, int] | None = None, record_waveforms: bool = False):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        self.cal = cal
        self.mode = mode
        self.seed = cal.seed if seed is None else seed
        self.force = dict(force or {})
        self.record_waveforms = record_waveforms
        self.channels = ChannelConfig.from_dict(assembled.meta["channels"])
        self.results: list[str] = list(assembled.meta["results"])
        unknown = set(self.force) - set(self.results)
        if unknown:
            raise ValueError(f"forced result(s) not produced by the program: {sorted(unknown)}")
        self.memories: dict[int, EnvelopeMemory] = {}
        for name, img in sorted(assembled.images.items()):
            mem = EnvelopeMemory(img.capacity)
            img.load_into(mem)
            self.memories[self.channels.id_of(name)] = mem
        self.qubits = sorted({c.qubit for c in self.channels.channels if c.qubit in cal.qubits})
        self.qpu = build_qpu(cal, self.qubits, self.seed)
        self.load_program(assembled)

    def load_program(self, assembled: Assembled) -> None:
        """Swap in new core programs; envelope memories are left untouched."""
        self.assembled = assembled
        self.tags = assembled.measurement_map()
        self.machine = Machine(assembled.programs, on_event=self._on_event)

    # -- per-event handling --------------------------------------------------

    def _reset_shot(self) -> None:
        self.machine.reset()
        self.qpu.reset()
        self.bits: dict[str, int] = {}
        self.iq: dict[str, complex] = {}
        self.pending_iq: dict[str, complex] = {}
        self.segments: list[tuple[int, np.ndarray]] = []
        self.waveforms: list[tuple[int, int, np.ndarray]] = []

    def _forced_bit(self, qubit: str, result: str | None) -> None:
        if result in self.force:
            q = self.qpu.qubits[qubit]
            q.c0, q.c1 = (1 + 0j, 0j) if self.force[result] == 0 else (0j, 1 + 0j)

    def _on_event(self, machine: Machine, ev: PulseEvent) -> None:
        ch = self.channels.by_id(ev.channel)
        cmd = ev.cmd
        if ch.role == "qdrv":
            samples = synth_pulse(cmd, self.memories[ev.channel])
            if self.record_waveforms:
                self.waveforms.append((ev.cycle, ev.channel, samples))
            if ch.qubit in self.qpu.qubits:
                self.qpu.apply_drive(ch.qubit, samples, freq_from_word(cmd.freq_word, ch.sample_rate),
                                     phase_from_word(cmd.phase_word))
        elif ch.role == "rdrv":
            mem = self.memories[ev.channel]
            if self.record_waveforms:
                self.waveforms.append((ev.cycle, ev.channel, synth_pulse(cmd, mem)))
            else:
                mem.read(cmd.env_addr, cmd.length)
            result = self._upcoming_result(ev.core, ev.pc)
            self._forced_bit(ch.qubit, result)
            if self.mode == "ideal-iq":
                m = self.qpu.measure(ch.qubit, "ideal-iq")
                self.pending_iq[ch.qubit] = m.iq
            else:
                m = self.qpu.measure(ch.qubit, "waveform", n_samples=cmd.length,
                                     freq_frac=cmd.freq_word / (1 << FREQ_BITS),
                                     phase=phase_from_word(cmd.phase_word))
                start = ev.cycle * self.channels.samples_per_tick(ch.name)
                self.segments.append((start, m.adc, cmd.freq_word, phase_from_word(cmd.phase_word), ch.qubit))
        else:
            self._demodulate(machine, ev, ch)

    def _upcoming_result(self, core: int, pc: int) -> str | None:
        """Result name of the demod pulse that follows a readout drive on ``core``."""
        best = None
        for (c, p), tag in self.tags.items():
            if c == core and p > pc and (best is None or p < best[0]):
                best = (p, tag["result"])
        return best[1] if best else None

    def _demodulate(self, machine: Machine, ev: PulseEvent, ch) -> None:
        tag = self.tags.get((ev.core, ev.pc))
        if tag is None:
            raise RunError(f"demod pulse at core {ev.core} pc {ev.pc} has no measurement entry")
        qubit = tag["qubit"]
        cmd = ev.cmd
        self.memories[ev.channel].read(cmd.env_addr, cmd.length)
        if self.mode == "ideal-iq":
            if qubit not in self.pending_iq:
                raise RunError(f"demod window for {qubit} at cycle {ev.cycle} without a readout drive")
            z = self.pending_iq.pop(qubit)
        else:
            z = self._waveform_iq(ev, ch, qubit)
        d = self.cal.qubit(qubit).discriminator
        bit = discriminate(IqPoint.from_complex(z), d)
        self.bits[tag["result"]] = bit
        self.iq[tag["result"]] = z
        ticks = self.channels.ticks(ch.name, cmd.length)
        machine.schedule_delivery(ev.cycle + ticks + self.cal.fproc_latency, tag["fproc_id"], bit)

    def _waveform_iq(self, ev: PulseEvent, ch, qubit: str) -> complex:
        cmd = ev.cmd
        n = cmd.length
        w0 = ev.cycle * self.channels.samples_per_tick(ch.name)
        adc = np.zeros(n)
        own = None
        for start, tone, fword, phase, q in self.segments:
            lo, hi = max(start, w0), min(start + len(tone), w0 + n)
            if lo < hi:
                adc[lo - w0:hi - w0] += tone[lo - start:hi - start]
            if q == qubit and start <= w0:
                own = (start, fword, phase)
        if own is None:
            raise RunError(f"demod window for {qubit} at cycle {ev.cycle} without a readout drive")
        start, fword, phase = own
        if fword != cmd.freq_word:
            raise RunError(f"demod frequency word {cmd.freq_word} differs from the readout drive's {fword}")
        raw = mix_and_integrate(adc, cmd.freq_word, (0, n)).z
        # undo the drive phase accumulated up to the window start
        ref = 2 * math.pi * (cmd.freq_word / (1 << FREQ_BITS)) * (w0 - start) + phase
        model = self.qpu.qubits[qubit]
        scale = model.readout_amp / (model.adc_amp * n / 2)
        return complex(raw * np.exp(-1j * ref) * scale)

    # -- driver --------------------------------------------------------------

    def run_shot(self, max_cycles: int = DEFAULT_MAX_CYCLES) -> tuple[str, int]:
        self._reset_shot()
        res = self.machine.run(max_cycles)
        if res.status != "halted":
            raise RunError(f"cycle budget of {max_cycles} exhausted before all cores halted")
        bits = "".join(str(self.bits[r]) if r in self.bits else "x" for r in self.results)
        return bits, res.cycles

    def run(self, shots: int, *, keep_records: bool = False, max_cycles: int = DEFAULT_MAX_CYCLES) -> RunReport:
        if shots < 1:
            raise ValueError("shots must be at least 1")
        t0 = time.perf_counter()
        counts: Counter[str] = Counter()
        cycles = []
        records = [] if keep_records else None
        for i in range(shots):
            bits, n = self.run_shot(max_cycles)
            counts[bits] += 1
            cycles.append(n)
            if records is not None:
                records.append(ShotRecord(i, bits, {r: [z.real, z.imag] for r, z in self.iq.items()}, n))
        return RunReport(shots, dict(counts), self.seed, self.mode, self.results, min(cycles), max(cycles),
                         float(np.mean(cycles)), time.perf_counter() - t0, records)

    def waveform_dump(self) -> np.ndarray:
        """Concatenated synthesized samples of the last shot (needs ``record_waveforms``)."""
        if not self.waveforms:
            return np.zeros(0, dtype=complex)
        return np.concatenate([s for _, _, s in self.waveforms])


def run_shots(assembled: Assembled, cal: CalibrationSet, shots: int, seed: int | None = None,
              mode: str = "ideal-iq", **kw) -> RunReport:
    keep = kw.pop("keep_records", False)
    return ShotRunner(assembled, cal, mode, seed, **kw).run(shots, keep_records=keep)
