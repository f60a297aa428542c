import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record a PASS/FAIL line for the end-of-session acceptance summary."""

    def record(label, ok, detail):
        _VERDICTS.append(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
