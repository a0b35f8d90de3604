"""Shared fixtures and the per-criterion acceptance summary."""
import numpy as np
import pytest

from cgmc import LatticeGeometry, ModelSpec

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(tag, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        tag, title = mark.args
        entry = _CRITERIA.setdefault(tag, {"title": title, "ok": True, "notes": []})
        entry["ok"] &= rep.passed
        for key, val in item.user_properties:
            entry["notes"].append(f"{key}={val}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(_CRITERIA, key=lambda t: (int(t[2:].rstrip("abc")), t)):
        e = _CRITERIA[tag]
        status = "PASS" if e["ok"] else "FAIL"
        notes = "; ".join(e["notes"])
        terminalreporter.write_line(f"{tag:5s} {status}  {e['title']}" + (f"  [{notes}]" if notes else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def short_model():
    return ModelSpec.create(K=0.4, beta=1.0)


@pytest.fixture
def mixed_model():
    return ModelSpec.create(K=0.3, beta=0.8, kernel="triangular", L=4)


@pytest.fixture
def geo8():
    return LatticeGeometry(8, 2)
