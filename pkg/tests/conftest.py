"""Shared test plumbing: the acceptance-criterion result board.

Acceptance tests record one line per criterion through the
``criterion_report`` fixture; the summary hook prints the board after the
run so every criterion shows its pass/fail line even when pytest captures
stdout.
"""

_criterion_lines = {}


import pytest


@pytest.fixture(scope="session")
def criterion_report():
    def record(number: int, passed: bool, detail: str) -> bool:
        _criterion_lines[number] = (passed, detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criterion_lines):
        passed, detail = _criterion_lines[number]
        word = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {word} - {detail}")
