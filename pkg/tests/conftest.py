def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS, verdict_line

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail, seconds in sorted(RESULTS, key=lambda r: int(r[0].split()[0])):
        terminalreporter.write_line(verdict_line(name, ok, detail, seconds))
