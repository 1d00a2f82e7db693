import numpy as np
import pytest

from doublephase import calibration as cal
from doublephase import config as cfgmod
from doublephase.geometry import Grid
from doublephase.kernel_energy import Coefficient, Exponents


@pytest.fixture(scope="session")
def constants():
    return cal.load_constants()


@pytest.fixture(scope="session")
def sup_cfg():
    return cfgmod.preset("supercritical")


@pytest.fixture(scope="session")
def sup_run(sup_cfg):
    """The calibration run: 1D, n=16, K=20, (p, q, s, s') = (2, 2.5, 1/2, 1/2)."""
    return cal.run_configured(sup_cfg)


@pytest.fixture(scope="session")
def sup_run_fine(sup_cfg):
    return cal.run_configured(sup_cfg, n=2 * sup_cfg["grid"]["n"])


@pytest.fixture(scope="session")
def sub_cfg():
    return cfgmod.preset("subcritical")


@pytest.fixture(scope="session")
def sub_run(sub_cfg):
    return cal.run_configured(sub_cfg)


@pytest.fixture
def grid1d():
    return Grid.build(1, 1.0, 16, 0.75, 0.05, 8)


@pytest.fixture
def grid2d():
    return Grid.build(2, 1.0, 8, 0.5, 0.05, 4)


@pytest.fixture
def exp1d():
    return Exponents(1, 2.0, 2.5, 0.5, 0.5)


@pytest.fixture
def unit_coef():
    return Coefficient("constant", 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
