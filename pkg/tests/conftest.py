"""Shared pytest plumbing: the acceptance verdict table."""

import pytest

_VERDICTS = {}


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Call ``verdict(label, ok, detail)``; the test still asserts on its own.
    """

    def record(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f": {detail}" if detail else "")
        _VERDICTS[label] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[label])
