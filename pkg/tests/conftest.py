from __future__ import annotations

from collections import OrderedDict

import numpy as np
import pytest

from robustmsd.core import NominalModel
from robustmsd.experiments import REFERENCE_MU, REFERENCE_SIGMA

_criteria: "OrderedDict[int, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


def pytest_collection_modifyitems(session, config, items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            num, title = mark.args
            entry = _criteria.setdefault(num, {"title": title, "passed": 0, "failed": [], "total": 0})
            entry["total"] += 1
    # print criteria in numeric order regardless of collection order
    ordered = sorted(_criteria.items())
    _criteria.clear()
    _criteria.update(ordered)


def pytest_runtest_logreport(report):
    # count the call phase, or a setup phase that errored or skipped
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    num = _node_criteria.get(report.nodeid)
    if num is None:
        return
    entry = _criteria[num]
    if report.passed:
        entry["passed"] += 1
    else:
        entry["failed"].append(report.nodeid.split("::", 1)[-1])


_node_criteria: dict[str, int] = {}


@pytest.hookimpl(trylast=True)
def pytest_collection_finish(session):
    for item in session.items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _node_criteria[item.nodeid] = mark.args[0]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num, entry in _criteria.items():
        ran = entry["passed"] + len(entry["failed"])
        if ran == 0:
            continue
        ok = not entry["failed"] and entry["passed"] == entry["total"]
        status = "PASS" if ok else "FAIL"
        tr.write_line(f"{status}  criterion {num:>2}: {entry['title']}  ({entry['passed']}/{entry['total']} checks)")
        for nodeid in entry["failed"]:
            tr.write_line(f"        failed: {nodeid}")


@pytest.fixture(scope="session")
def reference_model():
    return NominalModel(REFERENCE_MU, REFERENCE_SIGMA)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
