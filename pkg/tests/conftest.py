import pytest

# one line per acceptance check, printed as a summary block at the end of the
# run so the verdicts are visible even when every test passes
_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Recorder for acceptance verdict lines: returns the formatted line."""

    def record(num, name, passed, detail, elapsed, budget):
        mark = "PASS" if passed else "FAIL"
        line = f"[{mark}] {num:02d} {name}: {detail} [{elapsed:.1f}s / budget {budget:.0f}s]"
        _ACCEPTANCE_LINES.append(line)
        return line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
