"""Hardware channel configuration.

A channel is one pulse generator: a qubit drive, a readout drive (several of
these may feed the same DAC, which is what multiplexed readout means here),
or a readout demodulator. Its position in the configuration list is the
8-bit channel id carried by Pulse instructions.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .isa import CHANNEL_BITS, ENVELOPE_CAPACITY

QCLK_HZ = 500e6

KINDS = {"qubit-drive": "qdrv", "readout-drive": "rdrv", "readout-demod": "rdlo"}
ROLES = {v: k for k, v in KINDS.items()}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Channel:
    name: str
    kind: str
    sample_rate: float
    core: int | None = None
    dac: int | None = None
    adc: int | None = None
    qubit: str | None = None
    env_capacity: int = ENVELOPE_CAPACITY

    @property
    def role(self) -> str:
        return KINDS[self.kind]


@dataclass
class ChannelConfig:
    channels: list[Channel]
    qclk_hz: float = QCLK_HZ
    _index: dict[str, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.channels) > (1 << CHANNEL_BITS):
            raise ConfigError(f"at most {1 << CHANNEL_BITS} channels are addressable")
        for i, ch in enumerate(self.channels):
            if ch.kind not in KINDS:
                raise ConfigError(f"channel {ch.name!r}: unknown kind {ch.kind!r}")
            if ch.name in self._index:
                raise ConfigError(f"duplicate channel name {ch.name!r}")
            if ch.sample_rate <= 0:
                raise ConfigError(f"channel {ch.name!r}: sample rate must be positive")
            if not 0 < ch.env_capacity <= ENVELOPE_CAPACITY:
                raise ConfigError(f"channel {ch.name!r}: envelope capacity must be in (0, {ENVELOPE_CAPACITY}]")
            ratio = ch.sample_rate / self.qclk_hz
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ConfigError(f"channel {ch.name!r}: sample rate is not a whole multiple of the qclk")
            self._index[ch.name] = i

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> Channel:
        try:
            return self.channels[self._index[name]]
        except KeyError:
            raise ConfigError(f"unmapped destination channel {name!r}") from None

    def id_of(self, name: str) -> int:
        self[name]
        return self._index[name]

    def by_id(self, channel_id: int) -> Channel:
        return self.channels[channel_id]

    def samples_per_tick(self, name: str) -> int:
        return int(round(self[name].sample_rate / self.qclk_hz))

    def ticks(self, name: str, samples: int) -> int:
        return math.ceil(samples / self.samples_per_tick(name))

    def find(self, qubit: str, role: str) -> Channel:
        kind = ROLES.get(role, role)
        hits = [c for c in self.channels if c.qubit == qubit and c.kind == kind]
        if len(hits) != 1:
            raise ConfigError(f"expected exactly one {kind} channel for {qubit}, found {len(hits)}")
        return hits[0]

    def core_of(self, name: str, mapping: dict[str, int] | None = None) -> int:
        """Core driving channel ``name``; the qubit mapping wins over the static core."""
        ch = self[name]
        if mapping and ch.qubit in mapping:
            return mapping[ch.qubit]
        if ch.core is None:
            raise ConfigError(f"channel {name!r} has no core and no mapped qubit")
        return ch.core

    @classmethod
    def from_dict(cls, doc: dict) -> "ChannelConfig":
        try:
            chans = [Channel(**c) for c in doc["channels"]]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed channel config: {exc}") from None
        return cls(chans, float(doc.get("qclk_hz", QCLK_HZ)))

    def to_dict(self) -> dict:
        return {"qclk_hz": self.qclk_hz, "channels": [asdict(c) for c in self.channels]}

    @classmethod
    def load(cls, path) -> "ChannelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_mapping(qubits) -> dict[str, int]:
    return {q: i for i, q in enumerate(qubits)}


def load_mapping(path) -> dict[str, int]:
    doc = json.loads(Path(path).read_text())
    doc = doc.get("mapping", doc)
    if not all(isinstance(k, str) and isinstance(v, int) and v >= 0 for k, v in doc.items()):
        raise ConfigError("mapping must be an object of qubit name -> core id")
    return dict(doc)
