import sys


def pytest_terminal_summary(terminalreporter):
    # collected by test_acceptance.py so the criterion lines survive plain -v runs
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
