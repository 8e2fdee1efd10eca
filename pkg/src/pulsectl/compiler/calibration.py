"""Calibration document: gate pulse templates, readout and model parameters."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..dsp import Discriminator, Envelope, make_envelope

DEFAULT_FEEDBACK_LATENCY = 64
DEFAULT_FPROC_LATENCY = 16


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class PulseTemplate:
    env: str
    amp: float
    phase: float = 0.0
    role: str = "qdrv"
    dest: str | None = None
    freq: float | None = None
    offset: int | None = None
    length: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "PulseTemplate":
        unknown = set(d) - {"env", "amp", "phase", "role", "dest", "freq", "offset", "length"}
        if unknown:
            raise CalibrationError(f"pulse template: unknown field(s) {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ReadoutCal:
    freq: float
    env: str
    amp: float
    window_ticks: int
    demod_env: str
    demod_delay_ticks: int = 8
    phase: float = 0.0
    demod_phase: float = 0.0


@dataclass(frozen=True)
class ModelParams:
    readout_amp: float = 1.0
    theta_d: float = math.pi / 2
    sigma: float = 0.0
    adc_amp: float = 0.45


@dataclass
class QubitCal:
    drive_freq: float
    readout: ReadoutCal
    gates: dict[str, tuple[PulseTemplate, ...]]
    discriminator: Discriminator = field(default_factory=Discriminator)
    model: ModelParams = field(default_factory=ModelParams)


@dataclass
class CalibrationSet:
    qubits: dict[str, QubitCal]
    envelopes: dict[str, dict]
    multi_gates: dict[tuple[str, tuple[str, ...]], tuple[PulseTemplate, ...]] = field(default_factory=dict)
    feedback_latency: int = DEFAULT_FEEDBACK_LATENCY
    fproc_latency: int = DEFAULT_FPROC_LATENCY
    seed: int = 0
    _env_cache: dict[str, Envelope] = field(default_factory=dict, repr=False, compare=False)

    def envelope(self, name: str) -> Envelope:
        if name not in self._env_cache:
            if name not in self.envelopes:
                raise CalibrationError(f"undefined envelope {name!r}")
            self._env_cache[name] = make_envelope(self.envelopes[name])
        return self._env_cache[name]

    def qubit(self, name: str) -> QubitCal:
        try:
            return self.qubits[name]
        except KeyError:
            raise CalibrationError(f"qubit {name!r} is not in the calibration set") from None

    def gate_templates(self, gate: str, qubits: tuple[str, ...]) -> tuple[PulseTemplate, ...]:
        if len(qubits) == 1:
            templates = self.qubit(qubits[0]).gates.get(gate)
        else:
            for q in qubits:
                self.qubit(q)
            templates = self.multi_gates.get((gate, tuple(qubits)))
        if templates is None:
            raise CalibrationError(f"missing calibration for gate {gate} on {','.join(qubits)}")
        return templates

    @classmethod
    def from_dict(cls, doc: dict) -> "CalibrationSet":
        try:
            qubits = {}
            for name, q in doc["qubits"].items():
                disc = q.get("discriminator", {})
                off = disc.get("offset", [0.0, 0.0])
                qubits[name] = QubitCal(
                    drive_freq=float(q["drive_freq"]),
                    readout=ReadoutCal(**q["readout"]),
                    gates={g: tuple(PulseTemplate.from_dict(t) for t in ts) for g, ts in q.get("gates", {}).items()},
                    discriminator=Discriminator(float(disc.get("rotation", 0.0)), complex(off[0], off[1])),
                    model=ModelParams(**q.get("model", {})),
                )
            multi = {}
            for key, ts in doc.get("gates", {}).items():
                gate, _, qs = key.partition(":")
                multi[(gate, tuple(qs.split(",")))] = tuple(PulseTemplate.from_dict(t) for t in ts)
            cal = cls(
                qubits=qubits,
                envelopes=dict(doc.get("envelopes", {})),
                multi_gates=multi,
                feedback_latency=int(doc.get("feedback_latency_ticks", DEFAULT_FEEDBACK_LATENCY)),
                fproc_latency=int(doc.get("fproc_latency_ticks", DEFAULT_FPROC_LATENCY)),
                seed=int(doc.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            if isinstance(exc, CalibrationError):
                raise
            raise CalibrationError(f"malformed calibration document: {exc!r}") from None
        cal.validate()
        return cal

    def validate(self) -> None:
        for name in self.envelopes:
            self.envelope(name)
        for qname, q in self.qubits.items():
            names = [t.env for ts in q.gates.values() for t in ts] + [q.readout.env, q.readout.demod_env]
            for env in names:
                self.envelope(env)
            if q.readout.window_ticks <= q.readout.demod_delay_ticks:
                raise CalibrationError(f"{qname}: readout window must exceed the demod delay")
        if self.feedback_latency < 0 or self.fproc_latency < 0:
            raise CalibrationError("latencies must be non-negative")

    @classmethod
    def load(cls, path) -> "CalibrationSet":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CalibrationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        return cls.from_dict(doc)
