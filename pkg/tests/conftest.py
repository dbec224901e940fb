import sys


def pytest_terminal_summary(terminalreporter):
    # surface the acceptance-criterion lines even when output capture is
    # on; they are printed inline too, so -s runs show them twice
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "CRITERION_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
