from __future__ import annotations

import numpy as np
import pytest

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, text): acceptance criterion number and summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    n, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        prev = _ACCEPTANCE.get(n, ("PASS", text))[0]
        _ACCEPTANCE[n] = ("PASS" if rep.passed and prev == "PASS" else "FAIL", text)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, text = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {text}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
