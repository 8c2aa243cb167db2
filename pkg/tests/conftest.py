import pytest

_ACCEPTANCE = []


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line for an acceptance criterion."""

    def record(number, name, passed, detail):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
