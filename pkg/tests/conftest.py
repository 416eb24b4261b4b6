import sys
from pathlib import Path

import pytest

from urscheck.cnf import CnfFormula

STUB = Path(__file__).with_name("stub_sampler.py")

_ACCEPTANCE_LINES: list[str] = []


def stub_command(*extra: str) -> str:
    args = " ".join(extra)
    return f"{sys.executable} {STUB} {{cnf}} {{n}} {args}".strip()


@pytest.fixture
def stub_cmd():
    return stub_command


@pytest.fixture
def record_acceptance():
    """Register a one-line PASS/FAIL summary for the terminal report."""

    def record(line: str) -> None:
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def small_formula():
    # 4 variables, 6 models
    return CnfFormula.from_clauses(4, [[1, 2], [-1, 3, 4], [-2, -3]])
