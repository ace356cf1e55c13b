"""Shared pytest plumbing for the suite."""

# One line per release criterion, appended by tests/test_acceptance.py in
# execution order and echoed after the normal test summary.
acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
