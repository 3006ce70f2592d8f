import re
import time
from contextlib import contextmanager

import pytest

_RESULTS = {}


@pytest.fixture
def criterion():
    """``with criterion("3", budget=5.0):`` times the block and records PASS/FAIL."""

    @contextmanager
    def run(label, budget):
        t0 = time.perf_counter()
        ok = False
        try:
            yield
            elapsed = time.perf_counter() - t0
            assert elapsed < budget, f"criterion {label} took {elapsed:.2f} s (budget {budget} s)"
            ok = True
        finally:
            elapsed = time.perf_counter() - t0
            line = f"criterion {label}: {'PASS' if ok else 'FAIL'} ({elapsed:.2f} s, budget {budget:g} s)"
            _RESULTS[label] = line
            print(line)

    return run


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_RESULTS, key=lambda s: (int(re.match(r"\d+", s).group()), s)):
        terminalreporter.write_line(_RESULTS[label])
