"""Pulse-level control stack: compiler, assembler, cycle-level emulator and simulated QPU."""

__version__ = "0.1.0"
