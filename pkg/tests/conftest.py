"""Shared pytest plumbing: the acceptance-criteria summary block."""

import pytest

_CRITERION_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def record_criterion():
    """Collect one pass/fail line per acceptance criterion for the summary."""

    def _record(number: int, passed: bool, detail: str) -> None:
        status = "PASS" if passed else "FAIL"
        _CRITERION_LINES[number] = f"criterion {number:>2}: {status} - {detail}"
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERION_LINES):
            terminalreporter.write_line(_CRITERION_LINES[number])
