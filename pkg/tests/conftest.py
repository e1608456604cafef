"""Shared pytest configuration.

Tests marked ``@pytest.mark.criterion(n)`` are collected into a pass/fail
table printed at the end of the session.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

_CRITERIA: dict[int, list[tuple[str, str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _CRITERIA.setdefault(mark.args[0], []).append((item.name, status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        runs = _CRITERIA[n]
        status = "PASS" if all(s == "PASS" for _, s, _ in runs) else "FAIL"
        details = " | ".join(f"{name}: {s}{' (' + d + ')' if d else ''}" for name, s, d in runs)
        tr.write_line(f"criterion {n:2d}: {status}  {details}")


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES
