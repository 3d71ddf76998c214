import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def desk_runs():
    """PhaseAT and standard AT on the desk rings task, 5 seeds, matched budgets."""
    import time

    from phaseat.experiments import paired_desk_runs

    t0 = time.perf_counter()
    runs = paired_desk_runs(seeds=range(5), epochs=100, plain=True)
    runs["seconds"] = time.perf_counter() - t0
    return runs
