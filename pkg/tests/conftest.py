import numpy as np
import pytest

from nonlocal_iss import DisturbanceSignal, FeedbackConfig, Grid, InitialCondition, VelocityModel

REFERENCE_D = DisturbanceSignal.sinusoid(2.4e-3, 1.0)


@pytest.fixture
def unit_velocity():
    return VelocityModel(1.0, 1.0)


@pytest.fixture
def example1():
    return FeedbackConfig(0.3, 0.0), InitialCondition(1.0, 1.0), 10.0


@pytest.fixture
def example2():
    return FeedbackConfig(0.3, 1.0), InitialCondition(2.0, 2.0), 20.0


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --- acceptance reporting ---------------------------------------------------
# Tests marked ``@pytest.mark.acceptance(n, "title")`` are aggregated per
# criterion; a criterion passes only if every test carrying its number passes.
# Details added with ``record_property("detail", ...)`` are shown on the line.

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and not report.failed):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "details": []})
    entry["ok"] = entry["ok"] and not report.failed
    if report.when == "call":
        entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["ok"] else "FAIL"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {entry['title']}" + (f" ({detail})" if detail else ""))
