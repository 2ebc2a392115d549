import numpy as np
import pytest

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def assert_simplex(p, tol=1e-9):
    p = np.asarray(p)
    assert np.all(p >= -tol)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=tol)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "passed": True, "notes": []})
    if report.failed:
        entry["passed"] = False
        entry["notes"].append(f"{report.when} failed: {report.longrepr.reprcrash.message}"
                              if hasattr(report.longrepr, "reprcrash") else "failed")
    if report.when == "call":
        entry["notes"] += [f"{k}={v}" for k, v in report.user_properties]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["passed"] else "FAIL"
        notes = "; ".join(entry["notes"])
        terminalreporter.write_line(f"criterion {number:2d} {status}  {entry['title']}"
                                    + (f"  [{notes}]" if notes else ""))
