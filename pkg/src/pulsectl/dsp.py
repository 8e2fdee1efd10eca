"""Floating-point model of the gateware signal chain.

One complex sample per DAC sample on the drive side, real samples on the ADC
side. Envelopes live in per-channel memories of signed 16-bit I/Q words;
pulses are the product of an envelope region, an amplitude and a carrier
whose phase restarts at the first sample of every pulse.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .isa import AMP_BITS, ENVELOPE_CAPACITY, FREQ_BITS, PHASE_BITS, PulseCommand

IQ_FULL_SCALE = (1 << 15) - 1


class DspError(ValueError):
    pass


@dataclass(frozen=True)
class Envelope:
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=complex)
        if samples.ndim != 1:
            raise DspError("envelope must be one-dimensional")
        if samples.size and np.max(np.abs(samples)) > 1 + 1e-12:
            raise DspError("envelope magnitude exceeds full scale")
        object.__setattr__(self, "samples", samples)

    @property
    def length(self) -> int:
        return int(self.samples.size)


def gaussian(length: int, sigma: float, amplitude: float = 1.0) -> Envelope:
    """Gaussian centred in the window; ``sigma`` is a fraction of ``length``."""
    n = np.arange(length)
    centre = (length - 1) / 2
    return Envelope(amplitude * np.exp(-0.5 * ((n - centre) / (sigma * length)) ** 2))


def square(length: int, amplitude: float = 1.0) -> Envelope:
    return Envelope(np.full(length, amplitude, dtype=complex))


def cos_edge_square(length: int, ramp: int, amplitude: float = 1.0) -> Envelope:
    """Flat top with raised-cosine edges of ``ramp`` samples."""
    env = np.full(length, amplitude, dtype=float)
    if ramp:
        edge = 0.5 * (1 - np.cos(np.pi * (np.arange(ramp) + 0.5) / ramp))
        env[:ramp] *= edge
        env[length - ramp:] *= edge[::-1]
    return Envelope(env.astype(complex))


def make_envelope(spec: dict) -> Envelope:
    """Build an envelope from a calibration entry.

    Supported shapes: ``gaussian`` (length, sigma), ``square`` (length),
    ``cos_edge_square`` (length, ramp), ``samples`` (list of [re, im]).
    """
    shape = spec.get("shape")
    amp = float(spec.get("amplitude", 1.0))
    if shape == "gaussian":
        return gaussian(int(spec["length"]), float(spec["sigma"]), amp)
    if shape == "square":
        return square(int(spec["length"]), amp)
    if shape == "cos_edge_square":
        return cos_edge_square(int(spec["length"]), int(spec["ramp"]), amp)
    if shape == "samples":
        return Envelope(np.array([complex(re, im) for re, im in spec["samples"]]) * amp)
    raise DspError(f"unknown envelope shape {shape!r}")


def quantize_iq(samples: np.ndarray) -> np.ndarray:
    """Complex samples to an (n, 2) int16 array of I/Q at full scale 2**15-1."""
    samples = np.asarray(samples, dtype=complex)
    scaled = np.stack([samples.real, samples.imag], axis=-1) * IQ_FULL_SCALE
    q = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(q, -IQ_FULL_SCALE, IQ_FULL_SCALE).astype(np.int16)


def dequantize_iq(iq: np.ndarray) -> np.ndarray:
    iq = np.asarray(iq, dtype=float).reshape(-1, 2)
    return (iq[:, 0] + 1j * iq[:, 1]) / IQ_FULL_SCALE


class EnvelopeMemory:
    """One channel's envelope RAM with a read/write access log.

    Each log entry is ``(addr, length)``. Contents are stored as quantized
    I/Q words; reads return the dequantized complex samples.
    """

    def __init__(self, capacity: int = ENVELOPE_CAPACITY):
        self.capacity = capacity
        self._iq = np.zeros((capacity, 2), dtype=np.int16)
        self._complex = np.zeros(capacity, dtype=complex)
        self.reads: list[tuple[int, int]] = []
        self.writes: list[tuple[int, int]] = []

    def write(self, addr: int, iq_words: np.ndarray) -> None:
        iq_words = np.asarray(iq_words, dtype=np.int16).reshape(-1, 2)
        n = len(iq_words)
        if addr < 0 or addr + n > self.capacity:
            raise DspError(f"envelope write [{addr}, {addr + n}) exceeds capacity {self.capacity}")
        self._iq[addr:addr + n] = iq_words
        self._complex[addr:addr + n] = dequantize_iq(iq_words)
        self.writes.append((addr, n))

    def read(self, addr: int, length: int) -> np.ndarray:
        if addr < 0 or length < 0 or addr + length > self.capacity:
            raise DspError(f"envelope region [{addr}, {addr + length}) out of bounds")
        self.reads.append((addr, length))
        return self._complex[addr:addr + length]

    def raw(self) -> bytes:
        return self._iq.tobytes()


def carrier(freq_word: int, phase_word: int, length: int) -> np.ndarray:
    n = np.arange(length)
    return np.exp(1j * (2 * np.pi * (freq_word / (1 << FREQ_BITS)) * n
                        + 2 * np.pi * phase_word / (1 << PHASE_BITS)))


def synth_pulse(cmd: PulseCommand, env_mem, fs: float | None = None) -> np.ndarray:
    """Complex output samples for one pulse command.

    ``env_mem`` is an :class:`EnvelopeMemory` or a plain complex array. The
    carrier frequency is a fraction of the sample rate, so ``fs`` only
    matters to callers converting to Hz.
    """
    if isinstance(env_mem, EnvelopeMemory):
        env = env_mem.read(cmd.env_addr, cmd.length)
    else:
        env_mem = np.asarray(env_mem, dtype=complex)
        if cmd.env_addr + cmd.length > len(env_mem):
            raise DspError(f"envelope region [{cmd.env_addr}, {cmd.env_addr + cmd.length}) out of bounds")
        env = env_mem[cmd.env_addr:cmd.env_addr + cmd.length]
    a = cmd.amp_word / (1 << AMP_BITS)
    return a * env * carrier(cmd.freq_word, cmd.phase_word, cmd.length)


@dataclass
class MuxOutput:
    samples: np.ndarray
    saturated: bool
    peak: float


def mux_readout(pulses: Iterable[tuple[int, np.ndarray]]) -> MuxOutput:
    """Sum ``(start_offset, samples)`` pulses onto one output stream.

    Overflow beyond unit magnitude is flagged, not clipped.
    """
    pulses = [(int(off), np.asarray(seq)) for off, seq in pulses]
    if any(off < 0 for off, _ in pulses):
        raise DspError("negative pulse offset")
    length = max((off + len(seq) for off, seq in pulses), default=0)
    dtype = complex if any(np.iscomplexobj(seq) for _, seq in pulses) else float
    out = np.zeros(length, dtype=dtype)
    for off, seq in pulses:
        out[off:off + len(seq)] += seq
    peak = float(np.max(np.abs(out))) if length else 0.0
    return MuxOutput(out, peak > 1.0, peak)


@dataclass(frozen=True)
class IqPoint:
    i: float
    q: float

    @property
    def z(self) -> complex:
        return complex(self.i, self.q)

    @classmethod
    def from_complex(cls, z: complex) -> "IqPoint":
        return cls(float(z.real), float(z.imag))


def mix_and_integrate(adc: Sequence[float], dlo_freq_word: int, window: tuple[int, int],
                      fs: float | None = None) -> IqPoint:
    """Down-convert with the digital LO and sum over ``window = (start, length)``.

    The LO phase is referenced to sample index 0 of ``adc``. The result is
    the raw accumulated sum, not an average.
    """
    adc = np.asarray(adc)
    start, length = window
    if start < 0 or length < 0 or start + length > len(adc):
        raise DspError(f"window [{start}, {start + length}) outside ADC record of {len(adc)} samples")
    n = np.arange(start, start + length)
    lo = np.exp(-2j * np.pi * (dlo_freq_word / (1 << FREQ_BITS)) * n)
    return IqPoint.from_complex(complex(np.sum(adc[start:start + length] * lo)))


@dataclass(frozen=True)
class Discriminator:
    """Rotate-then-threshold state decision; ``q > 0`` after the transform is |0>."""

    rotation: float = 0.0
    offset: complex = 0j

    def transform(self, iq) -> complex:
        z = iq.z if isinstance(iq, IqPoint) else complex(iq)
        return complex(np.exp(1j * self.rotation)) * (z - self.offset)


def discriminate(iq, d: Discriminator) -> int:
    """0 when the transformed quadrature is positive, else 1 (ties give 1)."""
    return 0 if d.transform(iq).imag > 0 else 1


@dataclass
class AcquisitionBuffer:
    tap: str
    samples: np.ndarray
    truncated: bool
    dropped: int = 0


TAPS = ("adc", "dlo", "dac")


def acquire(stream: Sequence, capacity: int, tap: str = "adc") -> AcquisitionBuffer:
    """Store the first ``capacity`` samples of a tapped stream verbatim."""
    if capacity <= 0:
        raise DspError("acquisition buffer capacity must be positive")
    if tap not in TAPS:
        raise DspError(f"unknown tap point {tap!r}; expected one of {TAPS}")
    stream = np.asarray(stream)
    kept = stream[:capacity].copy()
    return AcquisitionBuffer(tap, kept, len(stream) > capacity, max(0, len(stream) - capacity))


def dlo_stream(freq_word: int, length: int, start: int = 0) -> np.ndarray:
    """Samples of the down-conversion LO itself (the ``dlo`` tap)."""
    n = np.arange(start, start + length)
    return np.exp(-2j * np.pi * (freq_word / (1 << FREQ_BITS)) * n)


def write_waveform_csv(path, samples: Sequence[complex]) -> None:
    """Waveform dump with header ``n,i,q``."""
    samples = np.asarray(samples)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "i", "q"])
        for n, s in enumerate(samples):
            w.writerow([n, repr(float(np.real(s))), repr(float(np.imag(s)))])


def read_waveform_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([complex(float(r["i"]), float(r["q"])) for r in rows])


def phase_of(iq: IqPoint) -> float:
    return math.atan2(iq.q, iq.i)
