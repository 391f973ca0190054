def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_results

    if acceptance_results.LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(acceptance_results.LINES):
            terminalreporter.write_line(acceptance_results.LINES[k])
