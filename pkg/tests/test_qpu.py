import math

import numpy as np
import pytest

from pulsectl.qpu import QpuModel, QubitModel

F = 4.5e9


def model(seed=0, **kw):
    return QpuModel({"Q0": QubitModel(F, x90_weight=10.0, **kw)}, seed)


def x90(m, phase=0.0, scale=1.0):
    return m.apply_drive("Q0", np.full(10, scale + 0j), F, phase)


def test_x90_gives_equator():
    m = model()
    assert x90(m) == pytest.approx(math.pi / 2)
    assert abs(m.qubits["Q0"].p1 - 0.5) <= 1e-12


def test_two_x90_flip():
    m = model()
    x90(m)
    x90(m)
    assert abs(m.qubits["Q0"].p1 - 1) <= 1e-12


def test_phase_sets_axis():
    m = model()
    x90(m)
    x90(m, phase=math.pi)  # X90 then -X90 undoes it
    assert m.qubits["Q0"].p1 <= 1e-12


def test_zero_pulse_and_off_resonance_are_identity():
    m = model()
    assert x90(m, scale=0.0) == 0
    assert m.apply_drive("Q0", np.ones(10), F + 1e6, 0.0) == 0
    q = m.qubits["Q0"]
    assert (q.c0, q.c1) == (1, 0)


def test_empty_pulse_rejected():
    with pytest.raises(ValueError):
        model().apply_drive("Q0", np.zeros(0), F, 0.0)


def test_norm_preserved_over_many_drives():
    m = model()
    rng = np.random.default_rng(0)
    for _ in range(500):
        m.apply_drive("Q0", rng.uniform(0, 1, 10) + 0j, F, rng.uniform(0, 2 * math.pi))
    q = m.qubits["Q0"]
    assert abs(abs(q.c0) ** 2 + abs(q.c1) ** 2 - 1) <= 1e-12


def test_measure_ideal_blobs():
    m = model()
    r = m.measure("Q0")
    assert r.bit == 0 and r.iq == pytest.approx(1j)
    x90(m)
    x90(m)
    r = m.measure("Q0")
    assert r.bit == 1 and r.iq == pytest.approx(-1j)


def test_blob_amplitude_and_noise():
    m = model(readout_amp=0.3, sigma=0.05)
    pts = np.array([m.measure("Q0").iq for _ in range(2000)])
    assert abs(pts.mean() - 0.3j) < 0.01
    assert abs(pts.real.std() - 0.05) < 0.005


def test_collapse_is_sticky():
    m = model(seed=4)
    x90(m)
    first = m.measure("Q0").bit
    assert all(m.measure("Q0").bit == first for _ in range(20))


def test_equator_statistics():
    m = model(seed=11)
    bits = []
    for _ in range(10_000):
        m.reset()
        x90(m)
        bits.append(m.measure("Q0").bit)
    assert abs(np.mean(bits) - 0.5) <= 0.02


def test_waveform_tone():
    m = model(adc_amp=0.45)
    r = m.measure("Q0", "waveform", n_samples=64, freq_frac=1 / 8, phase=0.2)
    n = np.arange(64)
    assert np.allclose(r.adc, 0.45 * np.cos(2 * np.pi * n / 8 + 0.2 + math.pi / 2))


def test_seeded_determinism():
    def record(seed):
        m = model(seed, sigma=0.1)
        out = []
        for _ in range(50):
            m.reset()
            x90(m)
            r = m.measure("Q0")
            out.append((r.bit, r.iq))
        return out
    assert record(7) == record(7)
    assert record(7) != record(8)


def test_unknown_mode():
    with pytest.raises(ValueError):
        model().measure("Q0", "magic")
