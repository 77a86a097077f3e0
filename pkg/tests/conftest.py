"""Shared pytest plumbing: collects acceptance one-liners for the summary."""

# test_acceptance appends one "criterion NN PASS/FAIL" line per criterion;
# the hook below prints them as a terminal-summary section, which pytest
# does not capture, so the lines survive plain `pytest -v` output.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
