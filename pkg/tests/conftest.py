import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=30, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

_acceptance: dict[int, list[str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = report.__dict__.get("acceptance")
    if marker is not None:
        _acceptance.setdefault(marker, []).append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is not None:
        rep.acceptance = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        outcomes = _acceptance[n]
        ok = all(o == "passed" for o in outcomes)
        terminalreporter.write_line(
            f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} ({len(outcomes)} check(s))")
