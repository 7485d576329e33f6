"""Collects acceptance verdicts and repeats them at the end of the run."""

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[num])
