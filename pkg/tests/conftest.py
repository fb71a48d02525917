import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        detail = getattr(item, "criterion_detail", "")
        _CRITERIA[number] = (title, report.outcome.upper() if report.outcome != "passed" else "PASS", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        status = "FAIL" if status == "FAILED" else status
        terminalreporter.write_line(f"criterion {number:2d} {status:4s}  {title}" + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def record(request):
    """Attach a short measured-value note to the acceptance summary line."""
    def _record(text):
        request.node.criterion_detail = text
    return _record
