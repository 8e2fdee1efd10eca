"""Command-line entry point: compile, asm, disasm, run, ptp.

Exit codes: 0 success, 1 runtime failure (deadlock, late pulse), 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from . import ptp
from .assembler import Assembled, AssemblyError, assemble, disassemble, listing
from .channels import ChannelConfig, ConfigError, load_mapping
from .compiler import compile_circuit
from .compiler.calibration import CalibrationError, CalibrationSet
from .compiler.circuit import CircuitParseError, parse_circuit
from .compiler.ir import CompileError, IrBranch, IrOp, programs_from_json, programs_to_json
from .dsp import DspError, write_waveform_csv
from .emulator import EmulatorError
from .isa import IsaError
from .runner import MODES, RunError, ShotRunner

log = logging.getLogger("pulsectl")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2
INPUT_ERRORS = (CircuitParseError, CalibrationError, CompileError, ConfigError, AssemblyError, IsaError,
                DspError, json.JSONDecodeError, KeyError, ValueError, OSError)


class InputError(Exception):
    pass


def demo_path(name: str) -> Path:
    return Path(str(resources.files("pulsectl.demo").joinpath(name)))


def _read(path, what: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {p}")
    return p.read_text()


def _load_cal(path) -> CalibrationSet:
    text = _read(path, "calibration")
    try:
        return CalibrationSet.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except CalibrationError as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_channels(path) -> ChannelConfig:
    text = _read(path, "channel config")
    try:
        return ChannelConfig.from_dict(json.loads(text))
    except (json.JSONDecodeError, ConfigError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_mapping(path):
    if path is None:
        return None
    _read(path, "mapping")
    try:
        return load_mapping(path)
    except (json.JSONDecodeError, ConfigError) as exc:
        raise InputError(f"{path}: {exc}") from None


def format_schedule(ir) -> str:
    """Human-readable schedule: one line per pulse, indented by nesting."""
    lines = [f"# results: {' '.join(ir.results) or '-'}"]

    def visit(body, depth):
        pad = "  " * depth
        for node in body:
            if isinstance(node, IrOp):
                lines.append(f"{pad}{node.start:8d} +{node.duration:<5d} {node.label}")
                for p in node.pulses:
                    lines.append(f"{pad}    {p.start:8d} {p.channel:10s} f={p.freq:.6g} ph={p.phase:.6f} "
                                 f"a={p.amp:.4f} env={p.env} n={p.length}")
            elif isinstance(node, IrBranch):
                lines.append(f"{pad}{node.start:8d} if {node.result}=={node.value} (fproc {node.fproc_id}) "
                             f"until {node.end} on {','.join(node.qubits)}")
                lines.append(f"{pad}  then:")
                visit(node.then, depth + 2)
                if node.orelse:
                    lines.append(f"{pad}  else:")
                    visit(node.orelse, depth + 2)
    visit(ir.body, 0)
    return "\n".join(lines) + "\n"


# -- subcommands -----------------------------------------------------------------

def cmd_compile(args) -> int:
    text = _read(args.circuit, "circuit")
    try:
        prog = parse_circuit(text, source=str(args.circuit))
    except CircuitParseError as exc:
        raise InputError(str(exc)) from None
    cal = _load_cal(args.cal)
    channels = _load_channels(args.channels)
    mapping = _load_mapping(args.mapping)
    try:
        compiled = compile_circuit(prog, cal, channels, mapping)
        asm = assemble(compiled.programs, cal, channels, compiled.mapping)
    except (CompileError, CalibrationError, AssemblyError, ConfigError) as exc:
        raise InputError(f"{args.circuit}: {exc}") from None
    out = Path(args.out)
    asm.save(out)
    (out / "schedule.txt").write_text(format_schedule(compiled.ir))
    used = {name for name in cal.envelopes}
    (out / "pulses.json").write_text(programs_to_json(compiled.programs, {k: cal.envelopes[k] for k in sorted(used)}))
    if args.dump_listing:
        sys.stdout.write(listing(asm.programs))
    log.info("compiled %s into %s (%d cores)", args.circuit, out, len(asm.programs))
    return EXIT_OK


def cmd_asm(args) -> int:
    text = _read(args.pulses, "pulse program")
    programs, envelopes = programs_from_json(text)
    channels = _load_channels(args.channels)
    mapping = _load_mapping(args.mapping)
    asm = assemble(programs, envelopes, channels, mapping)
    asm.save(args.out)
    if args.dump_listing:
        sys.stdout.write(listing(asm.programs))
    return EXIT_OK


def cmd_disasm(args) -> int:
    path = Path(args.binary)
    if path.is_dir():
        path = path / "program.bin"
    data = path.read_bytes() if path.is_file() else None
    if data is None:
        raise InputError(f"program file not found: {path}")
    text = listing(disassemble(data))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_force(items) -> dict[str, int]:
    force = {}
    for item in items or ():
        name, sep, bit = item.partition("=")
        if not sep or bit not in ("0", "1"):
            raise InputError(f"--force expects NAME=0|1, got {item!r}")
        force[name] = int(bit)
    return force


def cmd_run(args) -> int:
    if args.shots < 1:
        raise InputError("--shots must be at least 1")
    build = Path(args.build)
    if not (build / "meta.json").is_file():
        raise InputError(f"no compiled program in {build} (expected program.bin and meta.json)")
    assembled = Assembled.load(build)
    cal = _load_cal(args.cal)
    runner = ShotRunner(assembled, cal, args.mode, args.seed, force=_parse_force(args.force),
                        record_waveforms=bool(args.waveform_dump))
    report = runner.run(args.shots, keep_records=args.records)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    json_path, csv_path = out.with_suffix(".json"), out.with_suffix(".csv")
    json_path.write_text(report.to_json())
    csv_path.write_text(report.to_csv())
    if args.gnuplot:
        out.with_suffix(".gp").write_text(report.gnuplot(csv_path.name))
    if args.waveform_dump:
        write_waveform_csv(args.waveform_dump, runner.waveform_dump())
    for bits, n in sorted(report.counts.items()):
        print(f"{bits}\t{n}\t{n / report.shots:.4f}")
    return EXIT_OK


def cmd_ptp(args) -> int:
    if args.trials < 1:
        raise InputError("--trials must be at least 1")
    try:
        trials = ptp.run_trials(args.trials, tuple(args.offset_range), tuple(args.delay_range),
                                tuple(args.proc_range), None if args.independent else args.asymmetry, args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    text = ptp.trials_csv(trials)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pulsectl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="circuit -> binary program, envelope images, schedule")
    c.add_argument("circuit")
    c.add_argument("--cal", default=demo_path("calibration.json"))
    c.add_argument("--channels", default=demo_path("channels.json"))
    c.add_argument("--mapping", default=None)
    c.add_argument("--out", default="build")
    c.add_argument("--dump-listing", action="store_true")
    c.set_defaults(func=cmd_compile)

    a = sub.add_parser("asm", help="pulse-level program JSON -> binary program and envelope images")
    a.add_argument("pulses")
    a.add_argument("--channels", default=demo_path("channels.json"))
    a.add_argument("--mapping", default=None)
    a.add_argument("--out", default="build")
    a.add_argument("--dump-listing", action="store_true")
    a.set_defaults(func=cmd_asm)

    d = sub.add_parser("disasm", help="binary program -> text listing")
    d.add_argument("binary", help="program.bin or a build directory")
    d.add_argument("--out", default=None)
    d.set_defaults(func=cmd_disasm)

    r = sub.add_parser("run", help="run shots of a compiled program against the qubit model")
    r.add_argument("build", help="build directory written by 'compile'")
    r.add_argument("--cal", default=demo_path("calibration.json"))
    r.add_argument("--shots", type=int, default=1000)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--mode", choices=MODES, default="ideal-iq")
    r.add_argument("--out", default="report")
    r.add_argument("--records", action="store_true", help="include per-shot records in the JSON report")
    r.add_argument("--force", action="append", metavar="RESULT=BIT",
                   help="project the named readout onto a fixed outcome")
    r.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script for the histogram")
    r.add_argument("--waveform-dump", default=None, metavar="CSV", help="synthesized samples of the last shot")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("ptp", help="randomized clock-offset estimation trials")
    t.add_argument("--trials", type=int, default=1000)
    t.add_argument("--offset-range", type=int, nargs=2, default=(-10**6, 10**6), metavar=("LO", "HI"))
    t.add_argument("--delay-range", type=int, nargs=2, default=(0, 10**4), metavar=("LO", "HI"))
    t.add_argument("--proc-range", type=int, nargs=2, default=(0, 10**3), metavar=("LO", "HI"))
    t.add_argument("--asymmetry", type=int, default=0, help="fixed d_ps - d_sp in ticks")
    t.add_argument("--independent", action="store_true", help="draw both path delays independently")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default=None)
    t.set_defaults(func=cmd_ptp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (EmulatorError, RunError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
