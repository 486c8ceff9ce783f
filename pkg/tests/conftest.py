import numpy as np
import pytest

from sparseflow.numerics import RngStream
from sparseflow.problem import ProblemInstance, sample_batch


@pytest.fixture
def small_inst():
    return ProblemInstance.generate(m=6, n=10, sigma=0.1, p=0.3, seed=7)


@pytest.fixture
def small_obs(small_inst):
    ob = sample_batch(small_inst, RngStream(7, 1), 1)
    return ob.s[0], ob.y[0]


def random_symmetric(rng, n):
    M = rng.standard_normal((n, n))
    return 0.5 * (M + M.T)


def scalar_inst(a=1.0):
    return ProblemInstance(np.array([[a]]))


# (criterion number, report line), filled in by test_acceptance.py
ACCEPTANCE = []


def record_acceptance(number, title, passed, detail):
    line = f"criterion {number:>2} [{title}]: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE.append((number, line))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
