"""Shared pytest plumbing: acceptance-criterion outcome lines.

Tests marked @pytest.mark.criterion("...") get one [PASS]/[FAIL] line in a
summary section at the end of the run, with an optional measured-numbers
note supplied through the acceptance_note fixture.
"""

import pytest

_LINES = []
_NOTES = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(name): acceptance criterion; outcome is listed after the run",
    )


@pytest.fixture
def acceptance_note(request):
    marker = request.node.get_closest_marker("criterion")
    name = marker.args[0] if marker else request.node.name

    def note(text):
        _NOTES[name] = text

    return note


def pytest_runtest_makereport(item, call):
    if call.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if call.excinfo is None:
        line = f"[PASS] {name}"
        if name in _NOTES:
            line += f": {_NOTES[name]}"
    else:
        line = f"[FAIL] {name}: {call.excinfo.exconly()[:200]}"
    _LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
