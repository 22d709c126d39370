import pytest

_ACCEPTANCE = []


class AcceptanceRecorder:
    """Records one pass/fail line per acceptance criterion."""

    def __init__(self, lines):
        self.lines = lines

    def check(self, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
        self.lines.append(line)
        print(line)
        assert ok, line


@pytest.fixture
def acceptance():
    return AcceptanceRecorder(_ACCEPTANCE)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
