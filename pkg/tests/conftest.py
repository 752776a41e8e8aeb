import numpy as np
import pytest
from hypothesis import settings

import seqvi  # noqa: F401  (enables float64)
from seqvi.nn import FcnnSpec

# jax traces on first call, which makes per-example timing meaningless
settings.register_profile("seqvi", deadline=None, max_examples=50)
settings.load_profile("seqvi")


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function of a flat float64 vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (float(f(x + e)) - float(f(x - e))) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def spec_2_16_3():
    return FcnnSpec(2, (16,), 3)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; the lines are repeated in the terminal summary."""

    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
