import re

import numpy as np
import pytest

from heraldspi.patterns import build_pattern_set, select_subset, stealth_target
from heraldspi.photon_model import OpticalConfig

_acceptance = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by a test")


@pytest.fixture(scope="session")
def full32():
    return build_pattern_set(32)


@pytest.fixture(scope="session")
def sub350(full32):
    return select_subset(full32, 350)


@pytest.fixture(scope="session")
def stealth():
    return stealth_target(32)


@pytest.fixture
def default_cfg():
    return OpticalConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = next((m for m in getattr(report, "_criterion", [])), None)
    if marker is None:
        return
    number, text = marker
    number = str(number)
    ok = report.outcome == "passed"
    prev = _acceptance.get(number)
    _acceptance[number] = (text, ok and (prev is None or prev[1]), (prev[2] if prev else []) + [report.nodeid])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep._criterion = [(m.args[0], m.args[1])]


def _natural(number):
    head = re.match(r"\d*", number).group()
    return (int(head) if head else 0, number)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance, key=_natural):
        text, ok, _ = _acceptance[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {text}")
