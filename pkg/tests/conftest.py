"""Shared heavy fixtures and the acceptance summary printed at the end of a run."""
import os

import pytest

from catqec import experiments as ex
from catqec import stabilization as st

N_CRITERIA = 12
RESULTS = {}
_module_outcomes = {"passed": 0, "failed": 0}


def record(n, ok, detail=""):
    """Store the verdict of acceptance criterion ``n`` for the summary."""
    RESULTS[n] = (bool(ok), detail)
    return bool(ok)


def pytest_collection_modifyitems(session, config, items):
    # acceptance runs last so the module property suites have already reported
    items.sort(key=lambda it: "test_acceptance" in it.nodeid)


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid:
        return
    if report.when == "call" or report.failed:
        key = "failed" if report.failed else "passed" if report.passed else None
        if key:
            _module_outcomes[key] += 1


def property_suite_status():
    return dict(_module_outcomes)


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        ok, detail = RESULTS.get(n, (False, "not run"))
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")


@pytest.fixture(scope="session")
def channel_cache(tmp_path_factory):
    # an existing directory can be supplied to reuse channels across runs
    d = os.environ.get("CATQEC_CHANNEL_CACHE")
    return d if d else str(tmp_path_factory.mktemp("channels"))


@pytest.fixture(scope="session")
def channels(channel_cache):
    """Callable (variant, q, alpha2) -> {"CX", "CRX", "Idle"} memoised for the session."""
    memo = {}

    def get(variant, q, alpha2):
        key = (variant, q, alpha2)
        if key not in memo:
            memo[key] = ex.gate_channels(variant, q, alpha2, channel_cache)
        return memo[key]

    return get


@pytest.fixture(scope="session")
def stabilization_grid():
    return st.exponent_grid()
