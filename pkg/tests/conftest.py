import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    state = _CRITERIA.setdefault(number, {"title": title, "outcomes": []})
    if report.when == "call" or (report.when == "setup" and not report.passed):
        state["outcomes"].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        state = _CRITERIA[number]
        outs = state["outcomes"]
        if any(o == "failed" for o in outs):
            verdict = "FAIL"
        elif outs and all(o == "skipped" for o in outs):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {state['title']}")
