"""Circuit language: a stream of JSON statement objects.

A document is either a JSON array of statements or a sequence of JSON
objects separated by whitespace (usually one per line). Lines whose first
non-blank characters are ``#`` or ``//`` are comments. Statement forms::

    {"gate": "X90", "qubit": "Q0"}                 also "qubits": [...]
    {"pulse": "Q0.qdrv", "freq": 4.2e9, "phase": 0, "amp": 0.4,
     "env": "x90_gauss", "length": 256}            length optional
    {"virtual_z": "Q0", "phase": 1.5708}
    {"measure": "Q0", "result": "m0"}
    {"if": "m0", "equals": 1, "then": [...], "else": [...]}
    {"barrier": ["Q0", "Q1"]}                      [] or "all" = every qubit
    {"delay": ["Q0"], "ticks": 100}
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterator, Union


@dataclass(frozen=True)
class Gate:
    name: str
    qubits: tuple[str, ...]


@dataclass(frozen=True)
class RawPulse:
    dest: str
    freq: float
    phase: float
    amp: float
    env: str
    length: int | None = None


@dataclass(frozen=True)
class VirtualZ:
    qubit: str
    phase: float


@dataclass(frozen=True)
class Measure:
    qubit: str
    result: str


@dataclass(frozen=True)
class IfElse:
    result: str
    value: int
    then: tuple
    orelse: tuple = ()


@dataclass(frozen=True)
class Barrier:
    qubits: tuple[str, ...] = ()


@dataclass(frozen=True)
class Delay:
    qubits: tuple[str, ...]
    ticks: int


Statement = Union[Gate, RawPulse, VirtualZ, Measure, IfElse, Barrier, Delay]


def walk(statements) -> Iterator[Statement]:
    """Depth-first, program-order traversal including both if/else arms."""
    for st in statements:
        yield st
        if isinstance(st, IfElse):
            yield from walk(st.then)
            yield from walk(st.orelse)


@dataclass(frozen=True)
class CircuitProgram:
    statements: tuple[Statement, ...]

    @property
    def qubits(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for st in walk(self.statements):
            if isinstance(st, Gate):
                names = st.qubits
            elif isinstance(st, (VirtualZ, Measure)):
                names = (st.qubit,)
            elif isinstance(st, (Barrier, Delay)):
                names = st.qubits
            else:
                names = ()
            for q in names:
                seen.setdefault(q, None)
        return tuple(seen)

    @property
    def results(self) -> tuple[str, ...]:
        return tuple(st.result for st in walk(self.statements) if isinstance(st, Measure))


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.message}"


class CircuitParseError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic], source: str | None = None):
        self.diagnostics = diagnostics
        self.source = source
        prefix = f"{source}:" if source else ""
        super().__init__("\n".join(prefix + str(d) for d in diagnostics))


_COMMENT = re.compile(r"^[ \t]*(#|//).*$", re.MULTILINE)
_KINDS = ("gate", "pulse", "virtual_z", "measure", "if", "barrier", "delay")
_ALLOWED = {
    "gate": {"gate", "qubit", "qubits"},
    "pulse": {"pulse", "freq", "phase", "amp", "env", "length"},
    "virtual_z": {"virtual_z", "phase"},
    "measure": {"measure", "result"},
    "if": {"if", "equals", "then", "else"},
    "barrier": {"barrier"},
    "delay": {"delay", "qubit", "ticks"},
}


def _line_col(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def _split_objects(text: str) -> list[tuple[int, object]]:
    """Top-level JSON values with their character offsets."""
    dec = json.JSONDecoder()
    ws = re.compile(r"\s*")
    pos = ws.match(text, 0).end()
    items = []
    if pos < len(text) and text[pos] == "[":
        pos = ws.match(text, pos + 1).end()
        if pos < len(text) and text[pos] == "]":
            pos += 1
        else:
            while True:
                value, end = dec.raw_decode(text, pos)
                items.append((pos, value))
                pos = ws.match(text, end).end()
                if pos < len(text) and text[pos] == ",":
                    pos = ws.match(text, pos + 1).end()
                    continue
                if pos < len(text) and text[pos] == "]":
                    pos += 1
                    break
                raise json.JSONDecodeError("expected ',' or ']'", text, pos)
        pos = ws.match(text, pos).end()
        if pos != len(text):
            raise json.JSONDecodeError("unexpected content after array", text, pos)
        return items
    while pos < len(text):
        value, end = dec.raw_decode(text, pos)
        items.append((pos, value))
        pos = ws.match(text, end).end()
    return items


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.diags: list[Diagnostic] = []

    def error(self, pos: int, msg: str) -> None:
        self.diags.append(Diagnostic(*_line_col(self.text, pos), msg))

    def qubit_list(self, pos, value, what) -> tuple[str, ...] | None:
        if isinstance(value, str):
            return (value,)
        if isinstance(value, list) and all(isinstance(q, str) for q in value):
            return tuple(value)
        self.error(pos, f"{what}: expected a qubit name or list of names, got {value!r}")
        return None

    def number(self, pos, obj, key, kind=float, default=None, required=True):
        if key not in obj:
            if required:
                self.error(pos, f"missing field {key!r}")
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.error(pos, f"malformed literal for {key!r}: {v!r}")
            return default
        if kind is int:
            if isinstance(v, float) and not v.is_integer():
                self.error(pos, f"malformed literal for {key!r}: expected an integer, got {v!r}")
                return default
            return int(v)
        return float(v)

    def string(self, pos, obj, key):
        v = obj.get(key)
        if not isinstance(v, str) or not v:
            self.error(pos, f"field {key!r} must be a non-empty string, got {v!r}")
            return None
        return v

    def block(self, pos, value, what) -> tuple:
        if value is None:
            return ()
        if not isinstance(value, list):
            self.error(pos, f"{what}: expected a list of statements")
            return ()
        out = []
        for item in value:
            st = self.statement(pos, item)
            if st is not None:
                out.append(st)
        return tuple(out)

    def statement(self, pos: int, obj) -> Statement | None:
        if not isinstance(obj, dict):
            self.error(pos, f"statement must be a JSON object, got {type(obj).__name__}")
            return None
        kinds = [k for k in _KINDS if k in obj]
        if len(kinds) != 1:
            if not kinds:
                self.error(pos, f"unknown statement kind with fields {sorted(obj)}")
            else:
                self.error(pos, f"ambiguous statement: fields {kinds} are mutually exclusive")
            return None
        kind = kinds[0]
        extra = set(obj) - _ALLOWED[kind]
        if extra:
            self.error(pos, f"{kind}: unexpected field(s) {sorted(extra)}")
        n_before = len(self.diags)

        if kind == "gate":
            name = self.string(pos, obj, "gate")
            if "qubit" in obj and "qubits" in obj:
                self.error(pos, "gate: give either 'qubit' or 'qubits'")
                return None
            qubits = self.qubit_list(pos, obj.get("qubits", obj.get("qubit")), "gate")
            if qubits is not None and not qubits:
                self.error(pos, "gate: needs at least one qubit")
            st = Gate(name, qubits or ())
        elif kind == "pulse":
            length = self.number(pos, obj, "length", int, required=False)
            if length is not None and length <= 0:
                self.error(pos, f"pulse length must be positive, got {length}")
            st = RawPulse(self.string(pos, obj, "pulse"), self.number(pos, obj, "freq"),
                          self.number(pos, obj, "phase", default=0.0, required=False) or 0.0,
                          self.number(pos, obj, "amp"), self.string(pos, obj, "env"), length)
        elif kind == "virtual_z":
            st = VirtualZ(self.string(pos, obj, "virtual_z"), self.number(pos, obj, "phase"))
        elif kind == "measure":
            st = Measure(self.string(pos, obj, "measure"), self.string(pos, obj, "result"))
        elif kind == "if":
            value = self.number(pos, obj, "equals", int, default=1, required=False)
            st = IfElse(self.string(pos, obj, "if"), value,
                        self.block(pos, obj.get("then"), "then"), self.block(pos, obj.get("else"), "else"))
        elif kind == "barrier":
            v = obj["barrier"]
            qubits = () if v in ("all", []) else self.qubit_list(pos, v, "barrier")
            st = Barrier(qubits or ())
        else:
            qubits = self.qubit_list(pos, obj.get("delay") if obj.get("delay") is not None else obj.get("qubit"), "delay")
            ticks = self.number(pos, obj, "ticks", int)
            if ticks is not None and ticks < 0:
                self.error(pos, f"delay ticks must be non-negative, got {ticks}")
            st = Delay(qubits or (), ticks or 0)
        return st if len(self.diags) == n_before else None

    def check_results(self, positioned) -> None:
        produced: set[str] = set()

        def visit(pos, statements, visible: set[str]) -> set[str]:
            visible = set(visible)
            for st in statements:
                if isinstance(st, Measure):
                    if st.result in produced:
                        self.error(pos, f"result name {st.result!r} is produced more than once")
                    produced.add(st.result)
                    visible.add(st.result)
                elif isinstance(st, IfElse):
                    if st.result not in visible:
                        self.error(pos, f"undefined result name {st.result!r}: no preceding measure produces it")
                    if st.value not in (0, 1):
                        self.error(pos, f"if: compared value must be 0 or 1, got {st.value}")
                    visit(pos, st.then, visible)
                    visit(pos, st.orelse, visible)
            return visible

        visible: set[str] = set()
        for pos, st in positioned:
            visible = visit(pos, (st,), visible)


def parse_circuit(text: str, source: str | None = None) -> CircuitProgram:
    """Parse and validate a circuit document; raises :class:`CircuitParseError`."""
    cleaned = _COMMENT.sub(lambda m: " " * len(m.group(0)), text)
    p = _Parser(cleaned)
    try:
        raw = _split_objects(cleaned)
    except json.JSONDecodeError as exc:
        raise CircuitParseError([Diagnostic(exc.lineno, exc.colno, f"malformed JSON: {exc.msg}")], source) from None
    positioned = []
    for pos, obj in raw:
        st = p.statement(pos, obj)
        if st is not None:
            positioned.append((pos, st))
    if not p.diags:
        p.check_results(positioned)
    if p.diags:
        raise CircuitParseError(p.diags, source)
    return CircuitProgram(tuple(st for _, st in positioned))


def dump_circuit(prog: CircuitProgram) -> str:
    """One JSON object per line; ``parse_circuit`` reads it back unchanged."""
    return "".join(json.dumps(_to_json(st)) + "\n" for st in prog.statements)


def _to_json(st: Statement) -> dict:
    if isinstance(st, Gate):
        return {"gate": st.name, "qubits": list(st.qubits)}
    if isinstance(st, RawPulse):
        d = {"pulse": st.dest, "freq": st.freq, "phase": st.phase, "amp": st.amp, "env": st.env}
        if st.length is not None:
            d["length"] = st.length
        return d
    if isinstance(st, VirtualZ):
        return {"virtual_z": st.qubit, "phase": st.phase}
    if isinstance(st, Measure):
        return {"measure": st.qubit, "result": st.result}
    if isinstance(st, IfElse):
        return {"if": st.result, "equals": st.value,
                "then": [_to_json(s) for s in st.then], "else": [_to_json(s) for s in st.orelse]}
    if isinstance(st, Barrier):
        return {"barrier": list(st.qubits)}
    return {"delay": list(st.qubits), "ticks": st.ticks}
