"""Acceptance bookkeeping: one pass/fail line per criterion in the terminal summary."""

import pytest

CRITERIA = {
    1: "penalty oracles",
    2: "finite-difference gradient suite",
    3: "pseudo-domain and training-loop contracts",
    4: "desk-scale PMDG benefit",
    5: "GroupDRO dynamics",
    6: "equal-data protocol audit",
    7: "MDG/PMDG correlation report",
    8: "aggregation and table formatting",
    9: "run determinism",
}

_outcomes: dict[int, list[bool]] = {}
_notes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        _outcomes.setdefault(marker.args[0], []).append(call.excinfo is None)


@pytest.fixture
def note(request):
    """Attach a line of evidence to this test's criterion in the summary."""
    n = request.node.get_closest_marker("criterion").args[0]
    return lambda text: _notes.setdefault(n, []).append(text)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        if n not in _outcomes:
            continue
        status = "PASS" if all(_outcomes[n]) else "FAIL"
        tr.write_line(f"[{status}] criterion {n} [PRIMARY]: {title}")
        for text in _notes.get(n, []):
            tr.write_line(f"         {text}")
