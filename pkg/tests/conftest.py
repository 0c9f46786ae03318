import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """Record the outcome of every test marked ``criterion(number, name)``."""
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when == "teardown":
        return
    if report.when == "setup" and report.passed:
        return
    number, name = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if report.failed and report.when == "setup":
        detail = "setup failed"
    # a criterion split over several tests passes only if all of them do
    _, before, before_detail = _CRITERIA.get(number, (name, True, ""))
    _CRITERIA[number] = (name, before and report.passed, "; ".join(d for d in (before_detail, detail) if d))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        name, passed, detail = _CRITERIA[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {name}" + (f"  ({detail})" if detail else ""))


@pytest.fixture
def detail(request):
    """Attach a measured value to the criterion summary line."""

    def add(text):
        request.node.user_properties.append(("detail", text))

    return add


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
