"""Shared fixtures and the acceptance-criteria summary."""

from __future__ import annotations

import re

import numpy as np
import pytest

_AC_RESULTS: dict[int, tuple[str, str]] = {}
_AC_NAME = re.compile(r"test_acceptance\.py::test_ac(\d+)_")


def pytest_runtest_logreport(report):
    m = _AC_NAME.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        label = report.nodeid.split("::")[-1]
        _AC_RESULTS[n] = ("PASS" if report.outcome == "passed" else "FAIL", label)


def pytest_terminal_summary(terminalreporter):
    if not _AC_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_AC_RESULTS):
        status, label = _AC_RESULTS[n]
        terminalreporter.write_line(f"AC{n} {status} {label}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
