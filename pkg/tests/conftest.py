import numpy as np
import pytest

from qgp.core import Hyperparameters
from qgp.simulate import FOUR_SHELLS, make_shell_scheme

T_D = 0.02


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scheme():
    return make_shell_scheme([1000, 3000, 5000], [12, 16, 20], T_D, seed=3)


@pytest.fixture(scope="session")
def four_shell_scheme():
    return make_shell_scheme([b for b, _ in FOUR_SHELLS], [c for _, c in FOUR_SHELLS], T_D)


@pytest.fixture
def hyp():
    return Hyperparameters(0.5, 0.25, 0.15, 0.1, sigma_r=1.0, sigma_n2=1e-3, xi=0.1)


# acceptance criteria report one summary line each
ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
