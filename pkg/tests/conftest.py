"""Shared fixtures and the acceptance summary printed at the end of the run."""

from __future__ import annotations

import numpy as np
import pytest

from sparseif import rng as rngmod
from sparseif.coefficients import CoefficientSet, saturated_leak, sigmoid

_ACCEPTANCE: dict[str, tuple[str, str, float]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when not in ("setup", "call"):
        return
    ident, title = marker.args
    if report.when == "setup" and report.passed:
        return
    prev = _ACCEPTANCE.get(ident)
    status = "PASS" if report.passed else "FAIL"
    if prev is not None and prev[1] == "FAIL":
        status = "FAIL"
    _ACCEPTANCE[ident] = (title, status, getattr(report, "duration", 0.0) + (prev[2] if prev else 0.0))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for ident in sorted(_ACCEPTANCE, key=lambda s: int(s)):
        title, status, dur = _ACCEPTANCE[ident]
        terminalreporter.write_line(f"{status} criterion {ident:>2}: {title} ({dur:.1f} s)")


@pytest.fixture
def gen():
    return rngmod.stream(12345, rngmod.TEST, 0)


@pytest.fixture
def coef():
    return CoefficientSet(saturated_leak(1.0, 2.0), sigmoid(2.0, 1.0, 0.3), 0.5)


def random_tree_parents(rng: np.random.Generator, k: int) -> tuple:
    return tuple(int(rng.integers(1, j)) for j in range(2, k + 1))
