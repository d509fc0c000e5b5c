import pytest

ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one acceptance line; returns the pass flag so tests can assert it."""
    def _report(num, passed, detail):
        line = f"criterion {num}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return passed
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
