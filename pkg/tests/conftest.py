import _acceptance_log


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_log.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _acceptance_log.LINES:
        terminalreporter.write_line(line)
