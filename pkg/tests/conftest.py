import numpy as np
import pytest

FD_STEP = 1e-5


def pytest_runtest_logreport(report):
    # one visible line per acceptance criterion even when it fails
    if report.when == "call" and "test_acceptance" in report.nodeid and report.failed:
        name = report.nodeid.split("::")[-1]
        print(f"\nACCEPTANCE {name}: FAIL")


def central_difference(fn, x, h=FD_STEP):
    """Scalar central finite difference of a scalar function."""
    return (fn(x + h) - fn(x - h)) / (2.0 * h)


def rel_error(approx, exact, floor=1e-8):
    return abs(approx - exact) / max(abs(exact), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
