from __future__ import annotations

import pytest

from interference_lab.presets import golden, strong_cross
from interference_lab.sem import simulate


@pytest.fixture(scope="session")
def golden_cfg():
    return golden()


@pytest.fixture(scope="session")
def small_golden(golden_cfg):
    return simulate(golden_cfg, 4000)


@pytest.fixture(scope="session")
def small_cross():
    return simulate(strong_cross(), 4000)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
