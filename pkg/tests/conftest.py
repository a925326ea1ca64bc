import numpy as np
import pytest

from phonon_boltzmann.collision import PAIR, MomentumGrid, build_kernel_1d
from phonon_boltzmann.dispersion import fpu_chain, optical_nearest_neighbor

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def optical1d():
    return optical_nearest_neighbor(1.0, dim=1)


@pytest.fixture(scope="session")
def fpu():
    return fpu_chain()


@pytest.fixture(scope="session")
def kernel64(optical1d):
    return build_kernel_1d(MomentumGrid(1, 64), optical1d)


@pytest.fixture(scope="session")
def kernel32(optical1d):
    return build_kernel_1d(MomentumGrid(1, 32), optical1d)


@pytest.fixture(scope="session")
def pair_kernel64(optical1d):
    return build_kernel_1d(MomentumGrid(1, 64), optical1d, channels=(PAIR,))


@pytest.fixture(scope="session")
def fpu_kernel64(fpu):
    return build_kernel_1d(MomentumGrid(1, 64), fpu)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
