"""Stochastic product-state qubit backend for closed-loop runs.

Drive pulses become rotations about an axis in the XY plane; the angle is
the pulse's summed envelope magnitude relative to the calibrated X90 pulse.
Readout collapses the state and returns either a discriminator-frame IQ
point or a real ADC tone carrying the state-dependent phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-12


@dataclass
class QubitModel:
    drive_freq: float
    x90_weight: float
    readout_amp: float = 1.0
    theta_d: float = math.pi / 2
    sigma: float = 0.0
    adc_amp: float = 0.5
    adc_sigma: float = 0.0
    freq_tol: float = 10e3
    c0: complex = 1 + 0j
    c1: complex = 0j

    @property
    def p1(self) -> float:
        return abs(self.c1) ** 2

    def reset(self) -> None:
        self.c0, self.c1 = 1 + 0j, 0j

    def check_norm(self) -> None:
        norm = abs(self.c0) ** 2 + abs(self.c1) ** 2
        if abs(norm - 1) > NORM_TOL:
            raise AssertionError(f"state norm drifted to {norm!r}")


@dataclass
class Measurement:
    bit: int
    iq: complex | None = None
    adc: np.ndarray | None = None


class QpuModel:
    """Independent qubits sharing one seeded random stream."""

    def __init__(self, qubits: dict[str, QubitModel], seed: int = 0):
        self.qubits = qubits
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def reset(self) -> None:
        for q in self.qubits.values():
            q.reset()

    def rotate(self, qubit: str, theta: float, phi: float) -> None:
        """exp(-i theta/2 (cos(phi) X + sin(phi) Y))."""
        q = self.qubits[qubit]
        c, s = math.cos(theta / 2), math.sin(theta / 2)
        m01 = -1j * s * complex(math.cos(phi), -math.sin(phi))
        m10 = -1j * s * complex(math.cos(phi), math.sin(phi))
        q.c0, q.c1 = c * q.c0 + m01 * q.c1, m10 * q.c0 + c * q.c1
        q.check_norm()

    def apply_drive(self, qubit: str, pulse: np.ndarray, carrier_freq: float, phase: float) -> float:
        """Rotate ``qubit`` by a synthesized pulse; returns the angle applied.

        Pulses off the qubit's frequency by more than ``freq_tol`` leave the
        state untouched.
        """
        q = self.qubits[qubit]
        if len(pulse) == 0:
            raise ValueError("empty pulse")
        if abs(carrier_freq - q.drive_freq) > q.freq_tol:
            return 0.0
        theta = (math.pi / 2) * float(np.sum(np.abs(pulse))) / q.x90_weight
        if theta:
            self.rotate(qubit, theta, phase)
        return theta

    def _collapse(self, qubit: str) -> int:
        q = self.qubits[qubit]
        bit = int(self.rng.random() < q.p1)
        if bit:
            q.c0, q.c1 = 0j, 1 + 0j
        else:
            q.c0, q.c1 = 1 + 0j, 0j
        return bit

    def _noise(self, sigma: float, size=None):
        if sigma == 0:
            return 0j if size is None else np.zeros(size)
        if size is None:
            return complex(*self.rng.normal(0.0, sigma, 2))
        return self.rng.normal(0.0, sigma, size)

    def blob_center(self, qubit: str, bit: int) -> complex:
        q = self.qubits[qubit]
        phi = q.theta_d if bit == 0 else -q.theta_d
        return q.readout_amp * complex(math.cos(phi), math.sin(phi))

    def measure(self, qubit: str, mode: str = "ideal-iq", *, n_samples: int = 0,
                freq_frac: float = 0.0, phase: float = 0.0) -> Measurement:
        """Projective readout.

        ``ideal-iq`` returns ``A e^{+-j theta_d}`` plus complex Gaussian noise
        of per-quadrature width ``sigma``; the default ``theta_d = pi/2`` puts
        the noiseless points at (0, +A) and (0, -A). ``waveform`` returns
        ``n_samples`` of ``adc_amp cos(2 pi freq_frac n + phase +- theta_d)``
        plus white noise of width ``adc_sigma``.
        """
        bit = self._collapse(qubit)
        q = self.qubits[qubit]
        if mode == "ideal-iq":
            return Measurement(bit, iq=self.blob_center(qubit, bit) + self._noise(q.sigma))
        if mode == "waveform":
            phi = q.theta_d if bit == 0 else -q.theta_d
            n = np.arange(n_samples)
            tone = q.adc_amp * np.cos(2 * np.pi * freq_frac * n + phase + phi)
            return Measurement(bit, adc=tone + self._noise(q.adc_sigma, n_samples))
        raise ValueError(f"unknown readout mode {mode!r}")
