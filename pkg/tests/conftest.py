"""Shared pytest plumbing: the acceptance-line reporter.

Each acceptance test records exactly one ``ACCEPTANCE n: PASS/FAIL`` line;
this hook replays them in a summary section so they are visible even for
passing tests (whose stdout pytest otherwise swallows).
"""

ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
