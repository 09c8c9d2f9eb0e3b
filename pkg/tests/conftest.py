import os

# numba reads this once at import; give the parallel kernels a real pool even
# on small machines so the threaded code paths are exercised
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from diffknap.dp import ProblemSpec  # noqa: E402

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        status = "PASS" if report.outcome == "passed" else "FAIL"
        if _ACCEPTANCE.get(number, (title, "PASS"))[1] == "FAIL":
            status = "FAIL"
        _ACCEPTANCE[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2} {status}: {title}")


@pytest.fixture
def knap_fig():
    return ProblemSpec.knapsack([2.0, 1.0, -1.0, 3.0], [2, 1, 3, 2], 3)


@pytest.fixture
def topk_fig():
    return ProblemSpec.topk([3.0, -1.0, 4.0, -2.0, 2.0], 3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
