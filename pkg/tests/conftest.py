"""Collects per-criterion outcomes from tests marked ``criterion(n)``."""

from collections import defaultdict

import pytest

_outcomes: dict[int, list[bool]] = defaultdict(list)
_notes: dict[int, list[str]] = defaultdict(list)
TITLES = {
    1: "golden fixtures",
    2: "closed-gate identity",
    3: "frozen NAR",
    4: "gradient checks",
    5: "equivariance and invariance",
    6: "metric contract",
    7: "randomized positions",
    8: "NAR desk pre-training",
    9: "end-to-end protocol run",
    10: "determinism",
}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def note(request):
    """Attach a free-form measurement to the criterion's summary line."""
    marker = request.node.get_closest_marker("criterion")

    def add(text: str):
        _notes[marker.args[0]].append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _outcomes[marker.args[0]].append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(TITLES):
        if n not in _outcomes:
            continue
        verdict = "PASS" if all(_outcomes[n]) else "FAIL"
        extra = f"  [{'; '.join(_notes[n])}]" if _notes[n] else ""
        terminalreporter.write_line(f"criterion {n:>2} {verdict}  {TITLES[n]}{extra}")
