"""Shared fixtures plus a terminal summary of the acceptance checks."""

import re

import numpy as np
import pytest

_ACCEPT = re.compile(r"test_acceptance\.py::test_c(\d{2})_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # one verdict line per numbered acceptance test, setup errors count as FAIL
    passed, failed, names = set(), set(), {}
    for status, bucket in (("passed", passed), ("failed", failed),
                           ("error", failed)):
        for rep in terminalreporter.stats.get(status, []):
            m = _ACCEPT.search(rep.nodeid)
            if m:
                num = int(m.group(1))
                bucket.add(num)
                names[num] = m.group(2)
    if not (passed | failed):
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(passed | failed):
        verdict = "FAIL" if num in failed else "PASS"
        terminalreporter.write_line(
            f"criterion {num:02d} ({names[num]}): {verdict}")


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
