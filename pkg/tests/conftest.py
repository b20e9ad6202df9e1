import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or hasattr(report, "wasxfail")
    if report.when == "call" or failed:
        prev = _ACCEPTANCE.get((number, item.name), (title, "PASS"))[1]
        status = "FAIL" if failed or prev == "FAIL" else "PASS"
        _ACCEPTANCE[(number, item.name)] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (number, name), (title, status) in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"[{status}] criterion {number}: {title} ({name})")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
