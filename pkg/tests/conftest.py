"""Shared fixtures plus the per-criterion pass/fail report of the acceptance suite.

Acceptance tests carry ``@pytest.mark.criterion("<name>")`` and may record
measurements through the ``note`` fixture; the terminal summary prints one
line per criterion.
"""

from __future__ import annotations

import numpy as np
import pytest

_RESULTS: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def note(request):
    marker = request.node.get_closest_marker("criterion")
    key = marker.args[0] if marker else request.node.nodeid
    entry = _RESULTS.setdefault(key, {"outcome": None, "notes": []})

    def record(text: str) -> None:
        entry["notes"].append(text)
        print(text)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    entry = _RESULTS.setdefault(marker.args[0], {"outcome": None, "notes": []})
    if rep.when == "setup" and not rep.failed:
        return
    if hasattr(rep, "wasxfail"):
        status = "FAIL (known)"
    elif rep.passed:
        status = "PASS"
    elif rep.skipped:
        status = "SKIP"
    else:
        status = "FAIL"
    # a criterion spanning several tests passes only if all of them pass
    if entry["outcome"] in (None, "PASS"):
        entry["outcome"] = status


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, entry in _RESULTS.items():
        if entry["outcome"] is None:
            continue
        detail = "; ".join(entry["notes"])
        terminalreporter.write_line(f"{entry['outcome']:<13} {name}" + (f"  [{detail}]" if detail else ""))
