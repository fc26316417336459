import numpy as np
import pytest

from geoalign import synth


@pytest.fixture(scope="session")
def scene():
    """A small rendered scene: (depth, points, mask, camera)."""
    return synth.render(synth.random_scene(0, width=32, height=24, focal=30.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
