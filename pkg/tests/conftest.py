import os
import shutil
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parents[1]
SHIPPED = REPO / "data" / "synthetic_seasonal"
GOLDEN = Path(__file__).resolve().parent / "golden"

_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = getattr(report, "_criterion", None)
    if crit is None:
        return
    n, title = crit
    _criteria.setdefault(n, [title, []])[1].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep._criterion = (marker.args[0], marker.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, outcomes = _criteria[n]
        status = "PASS" if outcomes and all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title}")


@pytest.fixture(scope="session")
def shipped_copy(tmp_path_factory):
    """Read-only copy of the shipped synthetic dataset."""
    dst = tmp_path_factory.mktemp("shipped") / "synthetic_seasonal"
    shutil.copytree(SHIPPED, dst)
    return dst


@pytest.fixture(scope="session")
def shipped_run(shipped_copy, tmp_path_factory):
    """One full ``evaluate`` run on the shipped dataset, single-threaded."""
    from fdf.cli import main

    out = tmp_path_factory.mktemp("shipped_out")
    old = os.environ.get("FDF_THREADS")
    os.environ["FDF_THREADS"] = "1"
    try:
        code = main(["evaluate", "--config", str(shipped_copy / "config.json"), "--out", str(out)])
    finally:
        if old is None:
            os.environ.pop("FDF_THREADS", None)
        else:
            os.environ["FDF_THREADS"] = old
    assert code == 0
    return out
