import sys


def pytest_terminal_summary(terminalreporter):
    lines = [ln for name, mod in list(sys.modules.items()) if name.endswith("test_acceptance")
             for ln in getattr(mod, "VERDICTS", [])]
    if lines:
        terminalreporter.section("acceptance")
        for ln in sorted(lines):
            terminalreporter.write_line(ln)
