"""Collects acceptance outcomes and prints one line per criterion."""

import pytest

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(item.user_properties).get("detail", "")
        if hasattr(report, "wasxfail"):
            status = "PASS (unexpectedly)" if report.outcome == "passed" else "FAIL (expected, see decisions ledger)"
        else:
            status = "PASS" if report.outcome == "passed" else "FAIL"
        previous = _outcomes.get(label)
        if previous is None or previous[0] == "PASS":
            _outcomes[label] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")

    def order(label):
        head = label.split()[0]
        num = "".join(ch for ch in head if ch.isdigit())
        return int(num or 0), label

    for label in sorted(_outcomes, key=order):
        status, detail = _outcomes[label]
        line = f"criterion {label}: {status}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
