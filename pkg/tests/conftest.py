"""Shared pytest hooks.

The acceptance tests register one verdict line each; printing them in the
terminal summary keeps them visible even though pytest captures output
written during the tests themselves.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
