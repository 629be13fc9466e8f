import pytest

CRITERIA_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; the acceptance summary is echoed at the end of the run."""
    def record(number, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {name}: {detail}"
        CRITERIA_LINES.append((number, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(CRITERIA_LINES):
            terminalreporter.write_line(line)
