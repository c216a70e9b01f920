"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import re

_OUTCOMES = {}
_PATTERN = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    m = _PATTERN.search(report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2).replace("_", " "))
    if report.when == "call" or report.outcome != "passed":
        if report.failed:
            _OUTCOMES[key] = "FAIL"
        elif report.skipped:
            _OUTCOMES.setdefault(key, "SKIP")
        else:
            _OUTCOMES.setdefault(key, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), outcome in sorted(_OUTCOMES.items()):
        terminalreporter.write_line(f"criterion {num:2d} {name}: {outcome}")
