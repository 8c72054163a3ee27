import numpy as np
import pytest
from hypothesis import settings

from tdaqm.model import augment, linearize, operating_point, reference_network

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def net():
    return reference_network()


@pytest.fixture(scope="session")
def op(net):
    return operating_point(net)


@pytest.fixture(scope="session")
def tcp_sys(net, op):
    return linearize(net, op)


@pytest.fixture(scope="session")
def aug_sys(tcp_sys):
    return augment(tcp_sys)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion in the terminal summary
_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1][len("test_criterion_"):]
    if report.when == "call" or report.failed:
        if _criteria.get(name) != "FAIL":
            _criteria[name] = "FAIL" if report.failed else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        num, _, title = name.partition("_")
        terminalreporter.write_line(f"criterion {int(num):2d} {title.replace('_', ' '):<32} {_criteria[name]}")
