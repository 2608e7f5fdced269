import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=200, deadline=None)

_acceptance = []


@pytest.fixture
def detail(request):
    """Attach measured values to an acceptance test's summary line."""

    def _detail(text):
        request.node.user_properties.append(("detail", text))

    return _detail


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    notes = "; ".join(v for k, v in report.user_properties if k == "detail")
    _acceptance.append((name, report.outcome, report.duration, notes))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, duration, notes in _acceptance:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] {name} ({duration:.1f}s) {notes}")
