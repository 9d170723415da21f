import os
import sys

import matplotlib
import pytest

matplotlib.use("Agg")
sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record a one-line verdict per acceptance criterion, then assert it."""

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        _CRITERIA[number] = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        print(_CRITERIA[number])
        assert passed, _CRITERIA[number]

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
