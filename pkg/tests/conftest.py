"""Prints one pass/fail line per acceptance criterion at the end of the run."""

import re

_CRITERIA = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        if report.failed:
            reason = report.longrepr.reprcrash.message if hasattr(report.longrepr, "reprcrash") \
                else str(report.longrepr)
            detail = reason.splitlines()[0] if reason else detail
        _CRITERIA[key] = (m.group(2).replace("_", " "), report.outcome.upper(), detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        name, outcome, detail = _CRITERIA[key]
        tr.write_line(f"criterion {key}: {outcome:<7} {name}" + (f"  [{detail}]" if detail else ""))
