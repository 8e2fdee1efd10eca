import json

import pytest

from pulsectl.assembler import assemble
from pulsectl.channels import ChannelConfig
from pulsectl.cli import demo_path
from pulsectl.compiler import compile_circuit
from pulsectl.compiler.calibration import CalibrationSet


@pytest.fixture(scope="session")
def cal():
    return CalibrationSet.load(demo_path("calibration.json"))


@pytest.fixture(scope="session")
def channels():
    return ChannelConfig.load(demo_path("channels.json"))


@pytest.fixture(scope="session")
def mapping():
    return json.loads(demo_path("mapping.json").read_text())


@pytest.fixture(scope="session")
def build(cal, channels):
    """Compile and assemble a circuit text (or a demo circuit name)."""

    def _build(source, mapping=None):
        if source.isidentifier():
            source = demo_path(f"{source}.circ").read_text()
        compiled = compile_circuit(source, cal, channels, mapping)
        return compiled, assemble(compiled.programs, cal, channels, compiled.mapping)

    return _build
