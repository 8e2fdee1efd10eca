"""Intermediate representation and per-core pulse-level programs.

Times are qclk ticks (2 ns at 500 MHz) measured from the leading sync of the
program; pulse lengths are samples on the destination channel.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Union


class CompileError(ValueError):
    pass


@dataclass(frozen=True)
class IrPulse:
    channel: str
    freq: float
    phase: float
    amp: float
    env: str
    length: int
    vz_qubit: str | None = None
    offset: int | None = None
    start: int | None = None


@dataclass(frozen=True)
class IrOp:
    label: str
    qubits: tuple[str, ...]
    pulses: tuple[IrPulse, ...]
    kind: str = "gate"
    min_duration: int = 0
    result: str | None = None
    fproc_id: int | None = None
    start: int | None = None
    duration: int | None = None


@dataclass(frozen=True)
class IrVirtualZ:
    qubit: str
    phase: float


@dataclass(frozen=True)
class IrBarrier:
    qubits: tuple[str, ...]


@dataclass(frozen=True)
class IrDelay:
    qubits: tuple[str, ...]
    ticks: int


@dataclass(frozen=True)
class IrBranch:
    result: str
    value: int
    fproc_id: int
    then: tuple
    orelse: tuple
    qubits: tuple[str, ...] = ()
    start: int | None = None
    end: int | None = None


IrNode = Union[IrOp, IrVirtualZ, IrBarrier, IrDelay, IrBranch]


@dataclass(frozen=True)
class IrProgram:
    body: tuple
    qubits: tuple[str, ...]
    results: tuple[str, ...] = ()
    fproc_of: dict = field(default_factory=dict)
    measured_qubit: dict = field(default_factory=dict)
    phases_applied: bool = False
    scheduled: bool = False

    def with_body(self, body, **changes) -> "IrProgram":
        return replace(self, body=tuple(body), **changes)


def iter_nodes(body) -> Iterator:
    for node in body:
        yield node
        if isinstance(node, IrBranch):
            yield from iter_nodes(node.then)
            yield from iter_nodes(node.orelse)


def iter_pulses(body) -> Iterator[tuple[IrOp, IrPulse]]:
    for node in iter_nodes(body):
        if isinstance(node, IrOp):
            for p in node.pulses:
                yield node, p


# -- pulse-level programs ------------------------------------------------------

@dataclass(frozen=True)
class MeasureTag:
    result: str
    fproc_id: int
    qubit: str


@dataclass(frozen=True)
class TimedPulse:
    time: int
    channel: str
    freq: float
    phase: float
    amp: float
    env: str
    length: int
    tag: MeasureTag | None = None


@dataclass(frozen=True)
class Label:
    name: str


@dataclass(frozen=True)
class Goto:
    label: str


@dataclass(frozen=True)
class BranchOnResult:
    fproc_id: int
    value: int
    label: str


@dataclass(frozen=True)
class ReadResult:
    fproc_id: int
    reg: int


@dataclass(frozen=True)
class SyncCores:
    barrier_id: int
    cores: tuple[int, ...]


@dataclass(frozen=True)
class Stop:
    pass


PulseItem = Union[TimedPulse, Label, Goto, BranchOnResult, ReadResult, SyncCores, Stop]


@dataclass
class PulseProgram:
    core: int
    items: list = field(default_factory=list)

    def pulses(self) -> list[TimedPulse]:
        return [it for it in self.items if isinstance(it, TimedPulse)]


_ITEM_TYPES = {
    "pulse": TimedPulse, "label": Label, "goto": Goto, "branch_result": BranchOnResult,
    "read_result": ReadResult, "sync": SyncCores, "stop": Stop,
}
_ITEM_NAMES = {v: k for k, v in _ITEM_TYPES.items()}


def item_to_json(item) -> dict:
    d = {"op": _ITEM_NAMES[type(item)], **asdict(item)}
    if isinstance(item, SyncCores):
        d["cores"] = list(item.cores)
    return d


def item_from_json(d: dict):
    d = dict(d)
    try:
        cls = _ITEM_TYPES[d.pop("op")]
    except KeyError as exc:
        raise CompileError(f"unknown pulse-program item {exc.args[0]!r}") from None
    if cls is TimedPulse and d.get("tag") is not None:
        d["tag"] = MeasureTag(**d["tag"])
    if cls is SyncCores:
        d["cores"] = tuple(d["cores"])
    return cls(**d)


def programs_to_json(programs: dict[int, PulseProgram], envelopes: dict[str, dict]) -> str:
    """Pulse-level programs plus the envelope definitions they reference."""
    doc = {
        "envelopes": envelopes,
        "cores": {str(core): [item_to_json(it) for it in prog.items] for core, prog in sorted(programs.items())},
    }
    return json.dumps(doc, indent=1)


def programs_from_json(text: str) -> tuple[dict[int, PulseProgram], dict[str, dict]]:
    doc = json.loads(text)
    programs = {int(core): PulseProgram(int(core), [item_from_json(it) for it in items])
                for core, items in doc["cores"].items()}
    return programs, doc.get("envelopes", {})
