import re

ACCEPTANCE_FILE = "test_acceptance.py"
_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if ACCEPTANCE_FILE not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if not re.match(r"test_criterion_\d\d", name):
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _results[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_results):
        m = re.match(r"test_criterion_(\d\d)_(.*)", name)
        terminalreporter.write_line(f"criterion {int(m.group(1)):2d} {m.group(2).replace('_', ' ')}: {_results[name]}")
