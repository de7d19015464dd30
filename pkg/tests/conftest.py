import numpy as np
import pytest

from lpnkit.tensor_core import available_backends, use_backend

_ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=available_backends())
def backend(request):
    with use_backend(request.param):
        yield request.param


@pytest.fixture
def acceptance(request):
    """Record the outcome line of one acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, {})

    def record(number: int, passed: bool, detail: str):
        lines[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
