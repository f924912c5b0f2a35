import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion; returns the boolean it was given."""

    def _report(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
