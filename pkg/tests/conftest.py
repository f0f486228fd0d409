"""Prints a one-line PASS/FAIL verdict per acceptance criterion after the run."""

_verdicts = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _verdicts[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in _verdicts.items():
        name = nodeid.split("::")[-1]
        verdict = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{verdict}  {name}")
