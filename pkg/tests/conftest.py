import numpy as np
import pytest

from stgan.datasets import render_preset

_GATE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_GATE] = []


@pytest.fixture
def gate(request):
    """Record one acceptance line: gate(criterion, name, passed, detail)."""
    lines = request.config.stash[_GATE]

    def record(criterion, name, passed, detail=""):
        line = f"criterion {criterion} [{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_GATE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_rendered():
    """DS1/DS2 pair with 1,000 rows per label."""
    return render_preset(1000, 11), render_preset(1000, 12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
