import time

import numpy as np
import pytest
from hypothesis import settings

from gris.core import derive_run_stream
from gris.targets import gaussian

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return derive_run_stream(20240501, 0)


@pytest.fixture
def gauss2():
    """N(0, diag(1, 4)), the conjugate test target."""
    return gaussian(np.zeros(2), np.diag([1.0, 4.0]))


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for an acceptance criterion.

    The test calls ``criterion(number, passed, detail, limit)`` once; the line is
    printed in the terminal summary whatever the outcome.
    """
    start = time.perf_counter()
    done = []

    def record(number, passed, detail, limit):
        elapsed = time.perf_counter() - start
        ok = bool(passed) and elapsed < limit
        done.append(number)
        ACCEPTANCE_LINES.append(
            (number, f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  "
                     f"({elapsed:.1f} s of {limit:g} s)  {detail}"))
        assert passed, detail
        assert elapsed < limit, f"took {elapsed:.1f} s, limit {limit:g} s"

    yield record
    if not done:
        number = int(request.node.name.split("_")[1])
        ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: FAIL  (raised before a verdict)"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
