import pytest

# Lines appended by the acceptance suite; echoed in the terminal summary so
# they show up without -s.
ACCEPTANCE_LINES = []


def _order(line):
    # "criterion N: ..." by N; the informational line sits after criterion 1
    return int(line.split()[1].rstrip(":")) if line.startswith("criterion") else 1.5


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_order):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES
