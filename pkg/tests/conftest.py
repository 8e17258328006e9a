import pytest

# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def criterion_log():
    def record(number, title, passed, detail):
        ACCEPTANCE_LINES[number] = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        print(ACCEPTANCE_LINES[number])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
