"""Prints one PASS/FAIL line per acceptance criterion after the run."""

from collections import defaultdict

import pytest

_outcomes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        # an xfail is a criterion that does not hold: report it as FAIL
        ok = rep.passed and not hasattr(rep, "wasxfail")
        _outcomes[(n, title)].append((item.name, ok))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for (n, title), results in sorted(_outcomes.items()):
        failed = [name for name, ok in results if not ok]
        verdict = "PASS" if not failed else "FAIL"
        line = f"criterion {n} [{verdict}] {title} ({len(results) - len(failed)}/{len(results)} checks)"
        if failed:
            line += " failing: " + ", ".join(failed)
        terminalreporter.write_line(line)
