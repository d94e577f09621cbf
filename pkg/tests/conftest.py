import pytest

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``record(label, passed, detail)``."""

    def record(label, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
